#include "ahalab/shift_detect.hpp"

#define CPPHTTPLIB_NO_EXCEPTIONS
#include "httplib.h"
#include "json.hpp"

namespace ahalab {

// kept in its own TU so httplib's weight stays out of the detection hot path
std::string http_judge_call(const std::string& endpoint, double timeout_s,
                            const JudgeRequest& req) {
  std::string host = endpoint, path = "/";
  auto scheme_end = host.find("://");
  if (scheme_end != std::string::npos) {
    if (host.compare(0, scheme_end, "http") != 0)
      throw TransportFailure("unsupported scheme in endpoint: " + endpoint);
    host = host.substr(scheme_end + 3);
  }
  auto slash = host.find('/');
  if (slash != std::string::npos) {
    path = host.substr(slash);
    host = host.substr(0, slash);
  }
  if (host.empty()) throw TransportFailure("empty host in endpoint: " + endpoint);

  httplib::Client client(host);
  auto secs = static_cast<time_t>(timeout_s);
  auto usecs = static_cast<time_t>((timeout_s - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  nlohmann::ordered_json body;
  body["system"] = req.system_prompt;
  body["user"] = req.user_prompt;
  auto res = client.Post(path, body.dump(), "application/json");
  if (!res)
    throw TransportFailure("judge endpoint unreachable: " + endpoint + " (" +
                           httplib::to_string(res.error()) + ")");
  if (res->status != 200)
    throw TransportFailure("judge endpoint returned status " + std::to_string(res->status));
  return res->body;
}

}  // namespace ahalab
