#include "app.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "tscr/checkpoint.hpp"
#include "tscr/pipeline.hpp"
#include "tscr/trainer.hpp"

namespace tscr::app {

namespace fs = std::filesystem;
using nlohmann::json;

int resolve_port(int flag_port) {
  if (flag_port > 0) return flag_port;
  if (const char* env = std::getenv("TSCR_PORT")) {
    try {
      const int port = std::stoi(env);
      if (port > 0 && port < 65536) return port;
    } catch (const std::logic_error&) {
    }
    throw std::invalid_argument(std::string("TSCR_PORT is not a valid port: ") + env);
  }
  return 8080;
}

std::unique_ptr<httplib::Server> make_http_server(std::shared_ptr<ModelHolder> holder) {
  auto server = std::make_unique<httplib::Server>();
  auto send_json = [](httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(body.dump(), "application/json");
  };
  server->Get("/health", [holder, send_json](const httplib::Request&, httplib::Response& res) {
    const auto served = holder->get();
    send_json(res, 200,
              {{"status", "ok"},
               {"model_version", served->version},
               {"vocab_size", served->vocab->size()},
               {"items", served->vocab->item_count()}});
  });
  server->Get("/entities", [holder, send_json](const httplib::Request& req, httplib::Response& res) {
    std::size_t limit = 10;
    if (req.has_param("limit")) {
      try {
        const long long v = std::stoll(req.get_param_value("limit"));
        if (v < 0) throw std::invalid_argument("negative");
        limit = static_cast<std::size_t>(v);
      } catch (const std::logic_error&) {
        send_json(res, 400, {{"error", "limit must be a nonnegative integer"}});
        return;
      }
    }
    const auto served = holder->get();
    send_json(res, 200, serve_entity_search(*served, req.get_param_value("q"), limit));
  });
  server->Post("/recommend", [holder, send_json](const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::parse_error&) {
      send_json(res, 400, {{"error", "request body is not valid JSON"}});
      return;
    }
    try {
      const auto served = holder->get();
      send_json(res, 200, serve_recommend(*served, body));
    } catch (const ServiceError& e) {
      send_json(res, e.status(), {{"error", e.what()}});
    }
  });
  server->Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.status = 204;
  });
  return server;
}

namespace {

struct Overrides {
  std::string config;
  std::uint64_t seed = 0;
  int epochs = -1;
  std::string variant;

  void attach(CLI::App* cmd, bool config_required) {
    auto* opt = cmd->add_option("--config", config, "key=value configuration file");
    if (config_required) opt->required();
    cmd->add_option("--seed", seed, "override the configured seed");
    cmd->add_option("--epochs", epochs, "override the configured epoch budget");
    cmd->add_option("--variant", variant, "tscr or tscrkg");
  }

  TrainConfig resolve(CLI::App* cmd) const {
    TrainConfig c = config.empty() ? TrainConfig{} : load_train_config(config);
    if (cmd->count("--seed")) c.seed = seed;
    if (epochs >= 0) c.epochs = epochs;
    if (!variant.empty()) c.variant = parse_variant(variant);
    c.validate();
    return c;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App cli{"Knowledge-enhanced sequential conversational recommender", "tscr"};
  cli.require_subcommand(1);

  // prepare
  auto* prepare = cli.add_subcommand("prepare", "build vocabulary, splits and sequence dumps");
  std::string dialogs_path, entities_path, prepare_out;
  std::uint64_t prepare_seed = 42;
  prepare->add_option("--dialogs", dialogs_path, "dialog JSON-lines file")->required();
  prepare->add_option("--entities", entities_path, "entity dictionary TSV")->required();
  prepare->add_option("--out", prepare_out, "output data directory")->required();
  prepare->add_option("--seed", prepare_seed, "split seed");

  // pretrain-kg
  auto* pretrain = cli.add_subcommand("pretrain-kg", "pretrain entity embeddings on the KG");
  std::string data_dir, triples_path, embeddings_out;
  Overrides pretrain_over;
  pretrain->add_option("--data", data_dir, "prepared data directory")->required();
  pretrain->add_option("--triples", triples_path, "triple TSV")->required();
  pretrain->add_option("--out", embeddings_out, "embedding file to write")->required();
  pretrain_over.attach(pretrain, false);

  // augment
  auto* augment = cli.add_subcommand("augment", "splice KG shortest paths into sequences");
  std::string augment_in, augment_out;
  int max_hops = kDefaultMaxHops;
  augment->add_option("--data", data_dir, "prepared data directory")->required();
  augment->add_option("--triples", triples_path, "triple TSV")->required();
  augment->add_option("--in", augment_in, "sequence dump (default: <data>/train.jsonl)");
  augment->add_option("--out", augment_out, "augmented dump to write")->required();
  augment->add_option("--max-hops", max_hops, "path length budget");

  // train
  auto* train_cmd = cli.add_subcommand("train", "train a model and write a checkpoint");
  Overrides train_over;
  std::string embeddings_in, augmented_in, checkpoint_out, metrics_log;
  train_over.attach(train_cmd, true);
  train_cmd->add_option("--data", data_dir, "prepared data directory")->required();
  train_cmd->add_option("--embeddings", embeddings_in, "offline embedding file");
  train_cmd->add_option("--augmented", augmented_in, "augmented training sequences");
  train_cmd->add_option("--out", checkpoint_out, "checkpoint to write")->required();
  train_cmd->add_option("--log", metrics_log, "per-epoch metric log to write");

  // eval
  auto* eval_cmd = cli.add_subcommand("eval", "evaluate a checkpoint");
  std::string checkpoint_in, split = "test", report_out;
  eval_cmd->add_option("--checkpoint", checkpoint_in, "checkpoint file")->required();
  eval_cmd->add_option("--data", data_dir, "prepared data directory");
  eval_cmd->add_option("--split", split, "test, valid or train");
  eval_cmd->add_option("--report", report_out, "JSON report to write");

  // ablate
  auto* ablate = cli.add_subcommand("ablate", "train and evaluate the ablation matrix");
  Overrides ablate_over;
  ablate_over.attach(ablate, true);
  ablate->add_option("--data", data_dir, "prepared data directory")->required();
  ablate->add_option("--embeddings", embeddings_in, "offline embedding file")->required();
  ablate->add_option("--augmented", augmented_in, "augmented training sequences")->required();
  ablate->add_option("--report", report_out, "JSON report to write");

  // serve
  auto* serve = cli.add_subcommand("serve", "serve recommendations over HTTP");
  std::string host = "127.0.0.1";
  int port = 0;
  serve->add_option("--checkpoint", checkpoint_in, "checkpoint file")->required();
  serve->add_option("--data", data_dir, "prepared data directory")->required();
  serve->add_option("--host", host, "bind address");
  serve->add_option("--port", port, "port (default: $TSCR_PORT, then 8080)");

  std::vector<std::string> storage;
  storage.reserve(args.size() + 1);
  storage.push_back("tscr");
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());

  try {
    cli.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = cli.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*prepare) {
      const auto s = prepare_corpus(dialogs_path, entities_path, prepare_out, prepare_seed);
      out << "dialogs " << s.dialogs << " (empty " << s.empty_dialogs << ", dropped mentions "
          << s.dropped_mentions << ")\nsequences train " << s.train << " valid " << s.valid
          << " test " << s.test << '\n';
    } else if (*pretrain) {
      const auto config = pretrain_over.resolve(pretrain);
      const auto losses = pretrain_kg_file(data_dir, triples_path, config, embeddings_out);
      out << "pretrained " << losses.size() << " epochs";
      if (!losses.empty()) out << ", final loss " << losses.back();
      out << "\nwrote " << embeddings_out << '\n';
    } else if (*augment) {
      if (augment_in.empty()) augment_in = (fs::path(data_dir) / "train.jsonl").string();
      const auto changed = augment_file(data_dir, triples_path, augment_in, augment_out, max_hops);
      out << "augmented " << changed << " sequences\nwrote " << augment_out << '\n';
    } else if (*train_cmd) {
      const auto config = train_over.resolve(train_cmd);
      TrainInputs inputs{data_dir, {}, {}};
      if (!embeddings_in.empty()) inputs.embeddings = embeddings_in;
      if (!augmented_in.empty()) inputs.augmented = augmented_in;
      std::ostringstream log;
      const auto result = train_from_files(config, inputs, &log);
      save_checkpoint(checkpoint_out, result.model, config, result.best_epoch, result.history);
      if (!metrics_log.empty()) write_text(metrics_log, log.str());
      out << log.str() << "best epoch " << result.best_epoch << "\nwrote " << checkpoint_out << '\n';
      if (result.clamped_targets > 0)
        err << "warning: " << result.clamped_targets << " target probabilities clamped\n";
    } else if (*eval_cmd) {
      if (!fs::exists(checkpoint_in)) throw DataError("checkpoint not found: " + checkpoint_in);
      if (data_dir.empty()) throw CLI::RequiredError("--data");
      const auto result = evaluate_checkpoint(checkpoint_in, data_dir, split);
      if (!report_out.empty()) write_text(report_out, to_json(result).dump(2) + "\n");
      out << format_table(result);
    } else if (*ablate) {
      const auto config = ablate_over.resolve(ablate);
      TrainInputs inputs{data_dir, fs::path(embeddings_in), fs::path(augmented_in)};
      const auto report = run_ablations(config, inputs, nullptr);
      if (!report_out.empty()) write_text(report_out, to_json(report).dump(2) + "\n");
      out << format_table(report);
    } else if (*serve) {
      const auto prepared = load_prepared(data_dir);
      auto ckpt = load_checkpoint(checkpoint_in, prepared.vocab);
      ServedModel served{std::make_shared<const TscrModel>(std::move(ckpt.model)),
                         std::make_shared<const Vocab>(prepared.vocab),
                         file_fingerprint(checkpoint_in)};
      auto server = make_http_server(std::make_shared<ModelHolder>(std::move(served)));
      const int bound = resolve_port(port);
      err << "listening on " << host << ':' << bound << '\n';
      if (!server->listen(host, bound)) throw DataError("cannot listen on " + host + ":" + std::to_string(bound));
    }
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kNumericFailure;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kOk;
}

}  // namespace tscr::app
