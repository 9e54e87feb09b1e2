#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "driftlab/service.hpp"

#include <httplib.h>

namespace {

httplib::Server* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming concept-drift analytics service"};
  app.require_subcommand(1);

  int port = 8080;
  std::string host = "0.0.0.0";
  std::string data_dir = "data";
  std::string static_dir;
  auto* serve = app.add_subcommand("serve", "Run the HTTP API");
  serve->add_option("--port", port, "Listen port")->envname("DRIFTLAB_PORT")->check(CLI::Range(0, 65535));
  serve->add_option("--host", host, "Bind address")->envname("DRIFTLAB_HOST");
  serve->add_option("--data-dir", data_dir, "Directory for saved sessions")->envname("DRIFTLAB_DATA_DIR");
  serve->add_option("--static-dir", static_dir, "Directory served at / (browser bundle)")
      ->envname("DRIFTLAB_STATIC_DIR");

  CLI11_PARSE(app, argc, argv);

  try {
    driftlab::service::ServiceOptions options;
    options.data_dir = data_dir;
    if (!static_dir.empty()) options.static_dir = static_dir;
    driftlab::service::Service service(options);

    httplib::Server server;
    service.register_routes(server);
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);

    if (port == 0) {
      port = server.bind_to_any_port(host);
    } else if (!server.bind_to_port(host, port)) {
      std::cerr << "driftlab: cannot bind " << host << ":" << port << "\n";
      return 1;
    }
    std::cout << "driftlab listening on " << host << ":" << port << " (data dir " << data_dir << ")" << std::endl;
    server.listen_after_bind();
    service.drain();
  } catch (const std::exception& e) {
    std::cerr << "driftlab: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
