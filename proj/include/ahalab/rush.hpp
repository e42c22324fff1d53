#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "ahalab/util.hpp"

namespace ahalab {

struct GrammarViolation : Error {
  GrammarViolation(const std::string& what, std::size_t position)
      : Error(what + " at position " + std::to_string(position)), position(position) {}
  std::size_t position;
};

// row-major grid: 'o' empty, 'x' wall, 'A'-'Z' vehicles; 'A' is the target
// car and must be horizontal
struct Board {
  int rows = 0;
  int cols = 0;
  std::string cells;

  char at(int r, int c) const { return cells[static_cast<size_t>(r) * cols + c]; }
  char& at(int r, int c) { return cells[static_cast<size_t>(r) * cols + c]; }
  bool operator==(const Board&) const = default;
};

Board parse_board(const std::string& s, std::optional<int> rows = std::nullopt,
                  std::optional<int> cols = std::nullopt);

struct Move {
  char piece = 'A';
  char dir = '>';  // one of < > ^ v
  int steps = 1;
  bool operator==(const Move&) const = default;
};

using MoveSeq = std::vector<Move>;

// grammar: ^[A-Z][<>^v][0-9]+(,[A-Z][<>^v][0-9]+)*$, steps >= 1, no spaces
MoveSeq parse_moves(const std::string& s);
std::string format_moves(const MoveSeq& moves);

struct ApplyResult {
  Board board;              // state after the legal prefix
  bool solved = false;      // target car's right end on the right edge
  std::size_t legal_prefix = 0;
};

// applies moves until the first illegal one; never throws on illegal moves
ApplyResult apply_moves(const Board& board, const MoveSeq& moves);

bool board_solved(const Board& board);

// exit distance plus occupied cells between the target car and the exit;
// the shaping term rewards moves that strictly decrease this
int exit_potential(const Board& board);

// shortest solution by breadth-first search over board states; expansion in
// (piece, direction, steps) order makes the result the lexicographically
// smallest optimal sequence; nullopt when unsolvable; throws Error if the
// visited-state budget is exhausted
std::optional<MoveSeq> bfs_optimal(const Board& board, std::size_t max_states = 2000000);

}  // namespace ahalab
