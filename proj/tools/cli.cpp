#include "cli.hpp"

#include "empathia/checkpoint.hpp"
#include "empathia/config.hpp"
#include "empathia/corpus.hpp"
#include "empathia/error.hpp"
#include "empathia/inference.hpp"
#include "empathia/service.hpp"
#include "empathia/training.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace empathia::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

std::string flag_name(std::string_view key) {
  std::string s = "--";
  for (char c : key) s.push_back(c == '_' ? '-' : c);
  return s;
}

void require_exists(const fs::path& path, const std::string& flag) {
  if (!fs::exists(path)) throw UsageError(flag + ": no such file or directory: " + path.string());
}

// Defaults, then EMPATHIA_SEED, then the config file, then explicit flags.
TrainConfig resolve_config(bool toy, const std::string& config_file,
                           const std::map<std::string, std::string>& flags) {
  TrainConfig config = toy ? TrainConfig::toy() : TrainConfig{};
  if (const char* env = std::getenv("EMPATHIA_SEED"); env != nullptr && *env != '\0') {
    std::uint64_t seed = 0;
    const std::string_view v(env);
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), seed);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
      throw UsageError("EMPATHIA_SEED is not an unsigned integer: " + std::string(v));
    }
    config.seed = seed;
  }
  if (!config_file.empty()) {
    if (!fs::exists(config_file)) throw UsageError("--config: config file not found: " + config_file);
    try {
      config = load_config(config_file, config);
    } catch (const ConfigError& e) {
      throw UsageError("--config " + config_file + ": " + e.what());
    }
  }
  for (const auto& f : config_fields()) {
    auto it = flags.find(std::string(f.key));
    if (it == flags.end()) continue;
    try {
      f.set(config, it->second);
    } catch (const ConfigError& e) {
      throw UsageError(flag_name(f.key) + ": " + e.what());
    }
  }
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw UsageError(std::string("invalid configuration: ") + e.what());
  }
  return config;
}

void print_turn(std::ostream& out, const Reply& reply) {
  char prob[32];
  std::snprintf(prob, sizeof(prob), "%.4f", reply.emotion_probability);
  out << "response: " << reply.text << '\n';
  out << "emotion: " << reply.emotion_name << " (" << prob << ")\n";
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Joint emotion classification and empathetic response generation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  // prep
  std::string prep_data, prep_out, prep_config;
  int prep_min_freq = TrainConfig{}.min_freq;
  int prep_max_len = TrainConfig{}.max_len;
  auto* prep = app.add_subcommand("prep", "Build vocabularies and the label map from the train split");
  prep->add_option("--data", prep_data, "Corpus CSV file or directory with train.csv")->required();
  prep->add_option("--out", prep_out, "Output directory")->required();
  prep->add_option("--config", prep_config, "Training config file (min_freq, max_len, pretrained_dir)");
  auto* prep_min_freq_opt =
      prep->add_option("--min-freq", prep_min_freq, "Minimum word frequency")->capture_default_str();
  auto* prep_max_len_opt =
      prep->add_option("--max-len", prep_max_len, "Maximum sequence length")->capture_default_str();

  // train
  std::string train_data, train_out, train_config, train_resume;
  bool train_toy = false;
  bool train_quiet = false;
  auto* train_cmd = app.add_subcommand("train", "Train the joint model");
  train_cmd->add_option("--config", train_config, "Config file of key=value lines");
  train_cmd->add_option("--data", train_data, "Corpus CSV file or directory")->required();
  train_cmd->add_option("--out", train_out, "Run directory for checkpoints")->required();
  train_cmd->add_option("--resume", train_resume, "Continue from an epoch checkpoint directory");
  train_cmd->add_flag("--toy", train_toy, "Start from the 2-layer, 32-dim toy preset (desk-scale optimizer settings)");
  train_cmd->add_flag("--quiet", train_quiet, "Suppress per-epoch progress");
  std::map<std::string, std::string> train_flags;
  std::vector<std::pair<std::string, CLI::Option*>> train_field_opts;
  const TrainConfig defaults;
  std::map<std::string, std::string> field_values;  // node-based, so bound references stay valid
  for (const auto& f : config_fields()) {
    auto& slot = field_values[std::string(f.key)];
    auto* opt = train_cmd->add_option(flag_name(f.key), slot, std::string(f.help));
    opt->default_str(f.get(defaults));
    train_field_opts.emplace_back(std::string(f.key), opt);
  }

  // eval
  std::string eval_ckpt, eval_data, eval_split = "test", eval_name;
  bool eval_json = false;
  bool eval_weighted = false;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a corpus split");
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint directory or run directory")->required();
  eval->add_option("--data", eval_data, "Corpus CSV file or directory")->required();
  eval->add_option("--split", eval_split, "train, valid or test")->capture_default_str();
  eval->add_option("--name", eval_name, "Model name for the table (default: backbone (JT))");
  eval->add_flag("--json", eval_json, "Print the report as one JSON object");
  eval->add_flag("--weighted", eval_weighted, "Headline F1 is support-weighted instead of macro");

  // generate
  std::string gen_ckpt;
  std::vector<std::string> gen_context;
  auto* generate = app.add_subcommand("generate", "Reply to a dialogue context");
  generate->add_option("--ckpt", gen_ckpt, "Checkpoint directory or run directory")->required();
  generate->add_option("--context", gen_context,
                       "Dialogue turns, oldest first; repeat the flag for several turns")
      ->required();

  // serve
  std::string serve_ckpt, serve_host = "0.0.0.0", serve_cors = "*";
  int serve_port = 8080;
  long serve_ttl = 3600;
  auto* serve = app.add_subcommand("serve", "Run the HTTP inference service");
  serve->add_option("--ckpt", serve_ckpt, "Checkpoint directory or run directory")->required();
  serve->add_option("--port", serve_port, "TCP port")->capture_default_str()->check(CLI::Range(1, 65535));
  serve->add_option("--host", serve_host, "Bind address")->capture_default_str();
  serve->add_option("--cors-origin", serve_cors, "Allowed browser origin")->capture_default_str();
  serve->add_option("--session-ttl", serve_ttl, "Idle seconds before a session is dropped")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*prep) {
      require_exists(prep_data, "--data");
      std::map<std::string, std::string> flags;
      if (prep_min_freq_opt->count() > 0) flags["min_freq"] = std::to_string(prep_min_freq);
      if (prep_max_len_opt->count() > 0) flags["max_len"] = std::to_string(prep_max_len);
      const TrainConfig config = resolve_config(false, prep_config, flags);
      const Corpus corpus = load_corpus(prep_data, Split::kTrain);
      const PreparedData data = prepare_data(config, corpus, nullptr);
      fs::create_directories(prep_out);
      data.vocab.save(fs::path(prep_out) / "vocab.txt");
      data.tokenizer.save(fs::path(prep_out) / "classifier_vocab.txt");
      data.labels.save(fs::path(prep_out) / "labels.txt");
      out << "conversations " << corpus.conversations.size() << '\n'
          << "examples " << data.train.size() << '\n'
          << "skipped " << data.train_text.skipped << '\n'
          << "vocab " << data.vocab.size() << '\n'
          << "classifier_vocab " << data.tokenizer.size() << '\n'
          << "labels " << data.labels.size() << '\n';
      return kOk;
    }

    if (*train_cmd) {
      require_exists(train_data, "--data");
      if (!train_resume.empty()) require_exists(train_resume, "--resume");
      for (const auto& [key, opt] : train_field_opts) {
        if (opt->count() > 0) train_flags[key] = field_values[key];
      }
      const TrainConfig config = resolve_config(train_toy, train_config, train_flags);
      TrainOptions options;
      options.resume_from = train_resume;
      options.log = train_quiet ? nullptr : &out;
      const TrainResult result = train(config, train_data, train_out, options);
      out << "final " << result.final_dir.string() << '\n'
          << "best " << result.best_dir.string() << " (epoch " << result.best_epoch << ")\n";
      return kOk;
    }

    if (*eval) {
      require_exists(eval_ckpt, "--ckpt");
      require_exists(eval_data, "--data");
      Split split;
      try {
        split = parse_split(eval_split);
      } catch (const InputError& e) {
        throw UsageError(std::string("--split: ") + e.what());
      }
      const Checkpoint ck = Checkpoint::load(eval_ckpt);
      const EvalReport report =
          evaluate(ck, eval_data, split, eval_weighted ? F1Average::kWeighted : F1Average::kMacro);
      if (eval_json) {
        out << report.to_json() << '\n';
      } else {
        const std::string name =
            eval_name.empty() ? std::string(backbone_name(ck.config.backbone)) + " (JT)" : eval_name;
        out << report.to_table(name);
      }
      return kOk;
    }

    if (*generate) {
      require_exists(gen_ckpt, "--ckpt");
      const Checkpoint ck = Checkpoint::load(gen_ckpt);
      std::vector<Utterance> history;
      for (std::size_t i = 0; i < gen_context.size(); ++i) {
        history.push_back({i % 2 == 0 ? SpeakerRole::kSpeaker : SpeakerRole::kListener, gen_context[i]});
      }
      print_turn(out, respond(ck, history));
      return kOk;
    }

    if (*serve) {
      require_exists(serve_ckpt, "--ckpt");
      service::InferenceService::Options options;
      options.session_ttl = std::chrono::seconds(serve_ttl);
      service::InferenceService svc(options);
      svc.load_model(serve_ckpt);
      service::HttpServer server(svc, serve_cors);
      out << "listening on " << serve_host << ':' << serve_port << std::endl;
      if (!server.listen(serve_host, serve_port)) {
        err << "error: cannot listen on " << serve_host << ':' << serve_port << '\n';
        return kRuntime;
      }
      return kOk;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}

}  // namespace empathia::cli
