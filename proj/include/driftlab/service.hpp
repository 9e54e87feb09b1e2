#pragma once

// HTTP/JSON API over stream sessions. All routes live under /v1.

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>

namespace httplib {
class Server;
}

namespace driftlab::service {

struct ServiceOptions {
  std::filesystem::path data_dir = "data";
  /// Served at / when set (the browser bundle).
  std::optional<std::filesystem::path> static_dir;
};

class Service {
 public:
  explicit Service(ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  void register_routes(httplib::Server& server);

  std::size_t session_count() const;
  /// Waits for every background projection job.
  void drain();

  struct Entry;

 private:
  std::shared_ptr<Entry> find(const std::string& id) const;
  std::string add(std::shared_ptr<Entry> entry, std::optional<std::string> id = std::nullopt);

  ServiceOptions options_;
  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
};

/// OpenAPI 3 description of the routes.
std::string openapi_document();

}  // namespace driftlab::service
