#include "ahalab/rush.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <unordered_set>

namespace ahalab {

namespace {

struct Vehicle {
  char id;
  bool horizontal;
  int row, col;  // topmost/leftmost cell
  int length;
};

std::vector<Vehicle> vehicles_of(const Board& b) {
  std::map<char, std::vector<std::pair<int, int>>> cells;
  for (int r = 0; r < b.rows; ++r)
    for (int c = 0; c < b.cols; ++c) {
      char ch = b.at(r, c);
      if (ch >= 'A' && ch <= 'Z') cells[ch].push_back({r, c});
    }
  std::vector<Vehicle> out;
  for (auto& [id, pos] : cells) {
    bool same_row = true, same_col = true;
    for (auto& [r, c] : pos) {
      same_row &= r == pos[0].first;
      same_col &= c == pos[0].second;
    }
    if (pos.size() < 2 || (!same_row && !same_col))
      throw Error(std::string("piece '") + id + "' is not a straight vehicle of length >= 2");
    Vehicle v;
    v.id = id;
    v.horizontal = same_row;
    v.row = pos[0].first;
    v.col = pos[0].second;
    v.length = static_cast<int>(pos.size());
    // positions are scanned row-major so they are already sorted; verify
    // contiguity
    for (size_t i = 1; i < pos.size(); ++i) {
      int dr = pos[i].first - pos[i - 1].first;
      int dc = pos[i].second - pos[i - 1].second;
      if (same_row ? (dr != 0 || dc != 1) : (dr != 1 || dc != 0))
        throw Error(std::string("piece '") + id + "' is not contiguous");
    }
    out.push_back(v);
  }
  return out;
}

std::optional<Vehicle> find_vehicle(const Board& b, char id) {
  for (const auto& v : vehicles_of(b))
    if (v.id == id) return v;
  return std::nullopt;
}

// returns true and mutates the board when the move is legal
bool try_apply(Board& b, const Move& m) {
  std::optional<Vehicle> vo;
  try {
    vo = find_vehicle(b, m.piece);
  } catch (const Error&) {
    return false;
  }
  if (!vo) return false;
  const Vehicle& v = *vo;
  if (m.steps < 1) return false;
  int dr = 0, dc = 0;
  switch (m.dir) {
    case '<': dr = 0; dc = -1; break;
    case '>': dr = 0; dc = 1; break;
    case '^': dr = -1; dc = 0; break;
    case 'v': dr = 1; dc = 0; break;
    default: return false;
  }
  if (v.horizontal && dr != 0) return false;
  if (!v.horizontal && dc != 0) return false;
  // leading edge sweeps m.steps cells that must be free
  for (int s = 1; s <= m.steps; ++s) {
    int r, c;
    if (dc == 1) { r = v.row; c = v.col + v.length - 1 + s; }
    else if (dc == -1) { r = v.row; c = v.col - s; }
    else if (dr == 1) { r = v.row + v.length - 1 + s; c = v.col; }
    else { r = v.row - s; c = v.col; }
    if (r < 0 || r >= b.rows || c < 0 || c >= b.cols) return false;
    if (b.at(r, c) != 'o') return false;
  }
  for (int i = 0; i < v.length; ++i) {
    int r = v.horizontal ? v.row : v.row + i;
    int c = v.horizontal ? v.col + i : v.col;
    b.at(r, c) = 'o';
  }
  for (int i = 0; i < v.length; ++i) {
    int r = v.horizontal ? v.row + dr * m.steps : v.row + i + dr * m.steps;
    int c = v.horizontal ? v.col + i + dc * m.steps : v.col + dc * m.steps;
    b.at(r, c) = v.id;
  }
  return true;
}

}  // namespace

Board parse_board(const std::string& s, std::optional<int> rows, std::optional<int> cols) {
  Board b;
  if (rows && cols) {
    b.rows = *rows;
    b.cols = *cols;
  } else if (rows || cols) {
    int n = rows ? *rows : *cols;
    b.rows = b.cols = n;
  } else {
    auto side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(s.size()))));
    if (static_cast<size_t>(side) * side != s.size())
      throw Error("board string length " + std::to_string(s.size()) +
                  " is not a perfect square and no dimensions were given");
    b.rows = b.cols = side;
  }
  if (b.rows < 2 || b.cols < 2 || b.rows > 10 || b.cols > 10)
    throw Error("board dimensions must lie in [2, 10]");
  if (s.size() != static_cast<size_t>(b.rows) * b.cols)
    throw Error("board string length does not match dimensions");
  for (char c : s)
    if (c != 'o' && c != 'x' && !(c >= 'A' && c <= 'Z'))
      throw Error(std::string("invalid board character '") + c + "'");
  b.cells = s;
  auto vs = vehicles_of(b);  // validates shape of every piece
  auto a = std::find_if(vs.begin(), vs.end(), [](const Vehicle& v) { return v.id == 'A'; });
  if (a == vs.end()) throw Error("board has no target car 'A'");
  if (!a->horizontal) throw Error("target car 'A' must be horizontal");
  return b;
}

MoveSeq parse_moves(const std::string& s) {
  MoveSeq out;
  if (s.empty()) throw GrammarViolation("empty move sequence", 0);
  size_t i = 0;
  while (true) {
    if (i >= s.size() || s[i] < 'A' || s[i] > 'Z')
      throw GrammarViolation("expected piece letter", i);
    Move m;
    m.piece = s[i++];
    if (i >= s.size() || (s[i] != '<' && s[i] != '>' && s[i] != '^' && s[i] != 'v'))
      throw GrammarViolation("expected direction (<, >, ^, v)", i);
    m.dir = s[i++];
    size_t d0 = i;
    long steps = 0;
    while (i < s.size() && s[i] >= '0' && s[i] <= '9') {
      steps = steps * 10 + (s[i] - '0');
      if (steps > 1000000) throw GrammarViolation("step count out of range", d0);
      ++i;
    }
    if (i == d0) throw GrammarViolation("expected step count", i);
    if (steps < 1) throw GrammarViolation("step count must be >= 1", d0);
    m.steps = static_cast<int>(steps);
    out.push_back(m);
    if (i == s.size()) break;
    if (s[i] != ',') throw GrammarViolation("expected ','", i);
    ++i;
    if (i == s.size()) throw GrammarViolation("trailing ','", i - 1);
  }
  return out;
}

std::string format_moves(const MoveSeq& moves) {
  std::string out;
  for (size_t i = 0; i < moves.size(); ++i) {
    if (i) out.push_back(',');
    out.push_back(moves[i].piece);
    out.push_back(moves[i].dir);
    out += std::to_string(moves[i].steps);
  }
  return out;
}

bool board_solved(const Board& b) {
  for (int r = 0; r < b.rows; ++r)
    for (int c = b.cols - 1; c >= 0; --c)
      if (b.at(r, c) == 'A') return c == b.cols - 1;
  return false;
}

int exit_potential(const Board& b) {
  int arow = -1, aright = -1;
  for (int r = 0; r < b.rows; ++r)
    for (int c = 0; c < b.cols; ++c)
      if (b.at(r, c) == 'A' && c > aright) { arow = r; aright = c; }
  if (arow < 0) return 0;
  int pot = (b.cols - 1) - aright;
  for (int c = aright + 1; c < b.cols; ++c)
    if (b.at(arow, c) != 'o') ++pot;
  return pot;
}

ApplyResult apply_moves(const Board& board, const MoveSeq& moves) {
  ApplyResult res;
  res.board = board;
  for (const Move& m : moves) {
    Board next = res.board;
    if (!try_apply(next, m)) break;
    res.board = std::move(next);
    ++res.legal_prefix;
  }
  res.solved = board_solved(res.board);
  return res;
}

std::optional<MoveSeq> bfs_optimal(const Board& board, std::size_t max_states) {
  if (board_solved(board)) return MoveSeq{};

  struct Node {
    std::string state;
    std::size_t parent;
    Move move;
  };
  std::vector<Node> nodes;
  std::unordered_set<std::string> visited;
  nodes.push_back({board.cells, SIZE_MAX, Move{}});
  visited.insert(board.cells);

  auto reconstruct = [&](std::size_t idx) {
    MoveSeq seq;
    while (idx != 0) {
      seq.push_back(nodes[idx].move);
      idx = nodes[idx].parent;
    }
    std::reverse(seq.begin(), seq.end());
    return seq;
  };

  Board scratch = board;
  for (std::size_t head = 0; head < nodes.size(); ++head) {
    scratch.cells = nodes[head].state;
    auto vs = vehicles_of(scratch);  // sorted by piece letter
    for (const Vehicle& v : vs) {
      static constexpr char dirs_h[2] = {'<', '>'};
      static constexpr char dirs_v[2] = {'^', 'v'};
      const char* dirs = v.horizontal ? dirs_h : dirs_v;
      for (int di = 0; di < 2; ++di) {
        for (int steps = 1;; ++steps) {
          Move m{v.id, dirs[di], steps};
          Board next = scratch;
          if (!try_apply(next, m)) break;
          if (visited.insert(next.cells).second) {
            nodes.push_back({next.cells, head, m});
            if (board_solved(next)) return reconstruct(nodes.size() - 1);
            if (visited.size() > max_states)
              throw Error("bfs_optimal: state budget exhausted");
          }
        }
      }
    }
  }
  return std::nullopt;
}

}  // namespace ahalab
