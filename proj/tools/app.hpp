#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "tscr/service.hpp"

namespace httplib {
class Server;
}

namespace tscr::app {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericFailure = 3 };

/// Runs one subcommand: prepare, pretrain-kg, augment, train, eval, ablate,
/// serve. `args` excludes the program name.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Routes POST /recommend, GET /entities and GET /health onto `holder`.
std::unique_ptr<httplib::Server> make_http_server(std::shared_ptr<ModelHolder> holder);

/// Port from --port, else $TSCR_PORT, else 8080.
int resolve_port(int flag_port);

}  // namespace tscr::app
