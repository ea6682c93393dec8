#include "commands.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "qann/checkpoint.hpp"
#include "qann/data.hpp"
#include "qann/errors.hpp"
#include "qann/qa_hop.hpp"
#include "qann/trainer.hpp"

namespace qann::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

std::string blob_sha1(const std::string& bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw Error("SHA-1 digest failed");
  }
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return hex.str();
}

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json read_json_file(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const ordered_json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

ordered_json file_entry(const fs::path& path, std::size_t examples) {
  ordered_json j;
  j["path"] = path.string();
  j["sha1"] = file_blob_sha1(path);
  j["examples"] = examples;
  return j;
}

// ---- gen ----------------------------------------------------------------

struct GenConfig {
  SynthConfig synth;
  std::size_t n_train = 2000;
  std::size_t n_dev = 500;
  std::size_t n_test = 500;
};

GenConfig gen_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("generator config must be a JSON object");
  GenConfig c;
  auto count = [](const json& v, const std::string& key) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      throw ConfigError("config key '" + key + "' must be a non-negative integer");
    }
    return v.get<std::uint64_t>();
  };
  for (const auto& [key, v] : j.items()) {
    if (key == "n_entities") c.synth.n_entities = count(v, key);
    else if (key == "n_relations") c.synth.n_relations = count(v, key);
    else if (key == "chain_length") c.synth.chain_length = count(v, key);
    else if (key == "n_distractor_facts") c.synth.n_distractor_facts = count(v, key);
    else if (key == "n_train") c.n_train = count(v, key);
    else if (key == "n_dev") c.n_dev = count(v, key);
    else if (key == "n_test") c.n_test = count(v, key);
    else if (key == "seed") c.synth.seed = count(v, key);
    else throw ConfigError("unknown generator config key '" + key + "'");
  }
  return c;
}

ordered_json gen_config_to_json(const GenConfig& c) {
  ordered_json j;
  j["n_entities"] = c.synth.n_entities;
  j["n_relations"] = c.synth.n_relations;
  j["chain_length"] = c.synth.chain_length;
  j["n_distractor_facts"] = c.synth.n_distractor_facts;
  j["n_train"] = c.n_train;
  j["n_dev"] = c.n_dev;
  j["n_test"] = c.n_test;
  j["seed"] = c.synth.seed;
  return j;
}

std::uint64_t split_seed(std::uint64_t seed, std::uint64_t split) {
  return seed ^ (split * 0x9E3779B97F4A7C15ULL);
}

struct GenArgs {
  fs::path config;
  fs::path out;
  std::optional<std::uint64_t> seed;
};

int cmd_gen(const GenArgs& args, std::ostream& out) {
  GenConfig cfg = gen_config_from_json(read_json_file(args.config));
  if (args.seed) cfg.synth.seed = *args.seed;
  cfg.synth.validate();
  fs::create_directories(args.out);

  ordered_json manifest;
  manifest["command"] = "gen";
  manifest["seed"] = cfg.synth.seed;
  manifest["config"] = gen_config_to_json(cfg);
  auto vocab = std::make_shared<Vocab>();
  const std::pair<const char*, std::size_t> splits[] = {
      {"train", cfg.n_train}, {"dev", cfg.n_dev}, {"test", cfg.n_test}};
  std::uint64_t index = 0;
  for (const auto& [name, n] : splits) {
    SynthConfig split_cfg = cfg.synth;
    split_cfg.n_examples = n;
    split_cfg.seed = split_seed(cfg.synth.seed, index++);
    const Dataset data = gen_synthetic(split_cfg, vocab, name);
    const fs::path path = args.out / (std::string(name) + ".jsonl");
    save_canonical(data, path);
    manifest["datasets"][name] = file_entry(path, data.size());
    out << name << '\t' << data.size() << '\t' << manifest["datasets"][name]["sha1"].get<std::string>()
        << '\n';
  }
  write_json_file(args.out / "manifest.json", manifest);
  return kOk;
}

// ---- data loading ---------------------------------------------------------

Dataset load_any(const fs::path& path, bool cbt, std::shared_ptr<Vocab> vocab,
                 std::ostream& err) {
  Dataset d = cbt ? load_cbt(path, std::move(vocab)) : load_canonical(path, std::move(vocab));
  for (const std::string& w : d.warnings) err << "warning: " << w << '\n';
  return d;
}

std::shared_ptr<Vocab> frozen_vocab(const Checkpoint& ckpt) {
  auto vocab = std::make_shared<Vocab>(Vocab::from_tokens(ckpt.vocab));
  vocab->freeze();
  return vocab;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  fs::path config;
  fs::path data;
  fs::path out;
  bool resume = false;
  bool cbt = false;
  bool identity_eo = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> dev_subsample;
  std::optional<std::size_t> threads;
};

const char* kMetricsHeader = "step,epoch,lr,train_loss,dev_acc";

std::string metrics_line(const MetricsRow& row) {
  return std::to_string(row.step) + ',' + std::to_string(row.epoch) + ',' + fmt17(row.lr) + ',' +
         fmt17(row.train_loss) + ',' + fmt17(row.dev_accuracy);
}

ordered_json metrics_json(const fs::path& csv) {
  ordered_json rows = ordered_json::array();
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string step, epoch, lr, loss, acc;
    std::getline(ls, step, ',');
    std::getline(ls, epoch, ',');
    std::getline(ls, lr, ',');
    std::getline(ls, loss, ',');
    std::getline(ls, acc, ',');
    ordered_json r;
    r["step"] = std::stoull(step);
    r["epoch"] = std::stoull(epoch);
    r["lr"] = std::stod(lr);
    r["train_loss"] = std::stod(loss);
    r["dev_acc"] = std::stod(acc);
    rows.push_back(r);
  }
  return rows;
}

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  TrainConfig config = config_from_json(read_json_file(args.config));
  if (args.seed) config.seed = *args.seed;
  if (args.dev_subsample) config.dev_subsample = *args.dev_subsample;
  if (args.threads) config.threads = *args.threads;
  if (args.identity_eo) config.identity_eo = true;
  config.validate();

  fs::create_directories(args.out);
  const fs::path last_path = args.out / "last.ckpt";
  const fs::path best_path = args.out / "best.ckpt";
  const fs::path metrics_path = args.out / "metrics.csv";

  std::optional<Checkpoint> resume_last, resume_best;
  auto vocab = std::make_shared<Vocab>();
  if (args.resume) {
    resume_last = load_checkpoint(last_path);
    if (fs::exists(best_path)) resume_best = load_checkpoint(best_path);
    vocab = std::make_shared<Vocab>(Vocab::from_tokens(resume_last->vocab));
  }

  const fs::path train_path = args.data / (args.cbt ? "train.txt" : "train.jsonl");
  const fs::path dev_path = args.data / (args.cbt ? "dev.txt" : "dev.jsonl");
  const Dataset train_set = load_any(train_path, args.cbt, vocab, err);
  const Dataset dev_set = load_any(dev_path, args.cbt, vocab, err);
  if (resume_last && vocab->size() != resume_last->vocab.size()) {
    throw DataError("data introduces tokens unknown to the resumed checkpoint");
  }

  std::ofstream metrics(metrics_path, args.resume ? std::ios::app : std::ios::trunc);
  if (!metrics) throw Error("cannot write " + metrics_path.string());
  if (!args.resume) metrics << kMetricsHeader << '\n';

  TrainHooks hooks;
  hooks.on_metrics = [&](const MetricsRow& row) {
    metrics << metrics_line(row) << '\n';
    metrics.flush();
    out << "step " << row.step << " epoch " << row.epoch << " lr " << fmt17(row.lr)
        << " loss " << fmt17(row.train_loss) << " dev " << fmt17(row.dev_accuracy) << '\n';
  };
  hooks.on_epoch_end = [&](const Checkpoint& last, const Checkpoint& best) {
    save_checkpoint(last, last_path);
    save_checkpoint(best, best_path);
  };
  if (resume_last) hooks.resume_last = &*resume_last;
  if (resume_best) hooks.resume_best = &*resume_best;

  const TrainResult result = train(config, train_set, dev_set, hooks);
  save_checkpoint(result.last, last_path);
  save_checkpoint(result.best, best_path);
  metrics.close();

  ordered_json manifest;
  manifest["command"] = "train";
  manifest["seed"] = config.seed;
  manifest["config"] = config_to_json(config);
  manifest["datasets"]["train"] = file_entry(train_path, train_set.size());
  manifest["datasets"]["dev"] = file_entry(dev_path, dev_set.size());
  manifest["checkpoints"]["best.ckpt"] = file_blob_sha1(best_path);
  manifest["checkpoints"]["last.ckpt"] = file_blob_sha1(last_path);
  manifest["best"] = {{"step", result.best.step},
                      {"epoch", result.best.epoch},
                      {"dev_acc", result.best.dev_accuracy}};
  manifest["metrics"] = metrics_json(metrics_path);
  write_json_file(args.out / "manifest.json", manifest);
  out << "best dev " << fmt17(result.best.dev_accuracy) << " at step " << result.best.step
      << '\n';
  return kOk;
}

// ---- eval -----------------------------------------------------------------

std::pair<std::size_t, std::size_t> parse_sweep(const std::string& text) {
  const auto dots = text.find("..");
  try {
    if (dots == std::string::npos) throw std::invalid_argument(text);
    std::size_t a = std::stoul(text.substr(0, dots));
    std::size_t b = std::stoul(text.substr(dots + 2));
    if (a < 1 || b < a) throw std::invalid_argument(text);
    return {a, b};
  } catch (const std::logic_error&) {
    throw ConfigError("--hop-sweep expects a..b with 1 <= a <= b, got '" + text + "'");
  }
}

struct EvalArgs {
  fs::path checkpoint;
  fs::path data;
  std::optional<std::size_t> hops;
  std::optional<std::string> sweep;
  bool ablate = false;
  bool cbt = false;
  std::optional<std::size_t> dev_subsample;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  std::optional<fs::path> manifest;
};

int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  const Checkpoint ckpt = load_checkpoint(args.checkpoint);
  const Dataset data = load_any(args.data, args.cbt, frozen_vocab(ckpt), err);

  // Subsampling reuses the trainer's selection so dev numbers line up.
  TrainConfig selection = ckpt.config;
  selection.dev_subsample = args.dev_subsample.value_or(0);
  if (args.seed) selection.seed = *args.seed;
  const std::vector<Example> examples = dev_examples(selection, data);

  std::size_t first = ckpt.config.hops, last = ckpt.config.hops;
  if (args.sweep) std::tie(first, last) = parse_sweep(*args.sweep);
  else if (args.hops) first = last = *args.hops;
  if (first < 1) throw ConfigError("--hops must be at least 1");

  EvalOptions opts;
  opts.threads = args.threads;
  opts.ablate_query_gate = args.ablate;
  ordered_json rows = ordered_json::array();
  out << "hops\taccuracy\tcorrect\ttotal\n";
  for (std::size_t t = first; t <= last; ++t) {
    const EvalResult r = evaluate(ckpt.params, examples, t, opts);
    const auto correct = static_cast<std::size_t>(r.accuracy * examples.size() + 0.5);
    out << t << '\t' << fmt17(r.accuracy) << '\t' << correct << '\t' << examples.size() << '\n';
    rows.push_back({{"hops", t}, {"accuracy", r.accuracy}, {"correct", correct},
                    {"total", examples.size()}});
  }

  if (args.manifest) {
    ordered_json manifest;
    manifest["command"] = "eval";
    manifest["seed"] = selection.seed;
    manifest["checkpoint"] = {{"path", args.checkpoint.string()},
                              {"sha1", file_blob_sha1(args.checkpoint)}};
    manifest["config"] = config_to_json(ckpt.config);
    manifest["datasets"]["eval"] = file_entry(args.data, data.size());
    manifest["dev_subsample"] = selection.dev_subsample;
    manifest["ablate_query_gate"] = args.ablate;
    manifest["results"] = rows;
    write_json_file(*args.manifest, manifest);
  }
  return kOk;
}

// ---- inspect --------------------------------------------------------------

struct InspectArgs {
  fs::path checkpoint;
  fs::path data;
  std::optional<std::size_t> example;
  std::optional<std::size_t> hops;
  bool ablate = false;
  bool jsonl = false;
  bool cbt = false;
};

ForwardResult run_one(const Checkpoint& ckpt, const Example& ex, std::size_t hops, bool ablate) {
  ad::Tape tape;
  const BoundParams bound = bind(tape, ckpt.params);
  ForwardOptions fwd;
  fwd.hops = hops;
  fwd.ablate_query_gate = ablate;
  return forward_pass(tape, bound, ckpt.params.dims, ex, fwd);
}

std::string join_tokens(const Document& doc) {
  std::string s;
  for (const std::string& t : doc.raw_tokens) {
    if (!s.empty()) s += ' ';
    s += t;
  }
  return s;
}

void print_trace(std::ostream& out, const Vocab& vocab, std::size_t id, const Example& ex,
                 const ForwardResult& r, const std::optional<ForwardResult>& ablated) {
  const std::size_t gold = ex.gold_index();
  out << "# example " << id << '\n';
  out << "# query: " << join_tokens(ex.query) << '\n';
  out << "# gold: " << vocab.token(ex.candidates[gold]) << '\n';
  out << "# prediction: " << vocab.token(ex.candidates[r.prediction]) << " p="
      << fmt17(r.probs[r.prediction]) << '\n';
  if (ablated) {
    out << "# prediction (query gate ablated): "
        << vocab.token(ex.candidates[ablated->prediction]) << " p="
        << fmt17(ablated->probs[ablated->prediction]) << '\n';
  }
  out << "# answer gates:";
  for (const HopTrace& h : r.trace) out << " hop" << h.hop << " [" << fmt17(h.g_a) << ']';
  out << '\n';
  out << "span\ttoken";
  for (const HopTrace& h : r.trace) out << "\talpha_" << h.hop;
  out << '\n';
  for (std::size_t k = 0; k < r.spans.size(); ++k) {
    out << r.spans[k].start << '-' << r.spans[k].end << '\t' << vocab.token(r.support_answers[k]);
    for (const HopTrace& h : r.trace) out << '\t' << fmt17(h.alpha[k]);
    out << '\n';
  }
  out << "sum\t-";
  for (const HopTrace& h : r.trace) {
    double s = 0.0;
    for (double a : h.alpha) s += a;
    out << '\t' << fmt17(s);
  }
  out << '\n';
}

int cmd_inspect(const InspectArgs& args, std::ostream& out, std::ostream& err) {
  const Checkpoint ckpt = load_checkpoint(args.checkpoint);
  auto vocab = frozen_vocab(ckpt);
  const Dataset data = load_any(args.data, args.cbt, vocab, err);
  std::size_t begin = 0, end = data.size();
  if (args.example) {
    if (*args.example >= data.size()) {
      throw DataError("example " + std::to_string(*args.example) + " out of range; " +
                      args.data.string() + " holds " + std::to_string(data.size()));
    }
    begin = *args.example;
    end = begin + 1;
  }
  const std::size_t hops = args.hops.value_or(ckpt.config.hops);
  if (hops < 1) throw ConfigError("--hops must be at least 1");
  for (std::size_t i = begin; i < end; ++i) {
    const Example& ex = data.examples[i];
    const ForwardResult r = run_one(ckpt, ex, hops, false);
    std::optional<ForwardResult> ablated;
    if (args.ablate) ablated = run_one(ckpt, ex, hops, true);
    if (args.jsonl) {
      write_trace_jsonl(out, r);
    } else {
      print_trace(out, *vocab, i, ex, r, ablated);
      if (i + 1 < end) out << '\n';
    }
  }
  return kOk;
}

}  // namespace

std::string file_blob_sha1(const fs::path& path) { return blob_sha1(read_file(path)); }

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Query-answer network for cloze-style question answering"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate synthetic train/dev/test splits");
  gen_cmd->add_option("--config", gen.config, "Generator config (JSON)")->required();
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "Override the config seed");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", tr.config, "Training config (JSON)")->required();
  train_cmd->add_option("--data", tr.data, "Directory with train/dev files")->required();
  train_cmd->add_option("--out", tr.out, "Output directory")->required();
  train_cmd->add_flag("--resume", tr.resume, "Continue from <out>/last.ckpt");
  train_cmd->add_flag("--cbt", tr.cbt, "Read train.txt/dev.txt in the CBT layout");
  train_cmd->add_flag("--identity-eo", tr.identity_eo, "Freeze output embeddings to identity");
  train_cmd->add_option("--seed", tr.seed, "Override the config seed");
  train_cmd->add_option("--dev-subsample", tr.dev_subsample, "Evaluate on N dev examples");
  train_cmd->add_option("--threads", tr.threads, "Evaluation worker threads");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Accuracy table over hop counts");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data", ev.data, "Dataset file")->required();
  auto* hops_opt = eval_cmd->add_option("--hops", ev.hops, "Hops at evaluation time");
  eval_cmd->add_option("--hop-sweep", ev.sweep, "Inclusive range a..b")->excludes(hops_opt);
  eval_cmd->add_flag("--ablate-query-gate", ev.ablate, "Force a_0 to zero");
  eval_cmd->add_flag("--cbt", ev.cbt, "Dataset uses the CBT layout");
  eval_cmd->add_option("--dev-subsample", ev.dev_subsample, "Evaluate on N examples");
  eval_cmd->add_option("--seed", ev.seed, "Subsample seed (default: checkpoint seed)");
  eval_cmd->add_option("--threads", ev.threads, "Worker threads")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--manifest", ev.manifest, "Write a run manifest here");

  InspectArgs in;
  auto* inspect_cmd = app.add_subcommand("inspect", "Per-hop attention trace");
  inspect_cmd->add_option("--checkpoint", in.checkpoint, "Checkpoint file")->required();
  inspect_cmd->add_option("--data", in.data, "Dataset file")->required();
  inspect_cmd->add_option("--example", in.example, "0-based example index (default: all)");
  inspect_cmd->add_option("--hops", in.hops, "Hops (default: training value)");
  inspect_cmd->add_flag("--ablate-query-gate", in.ablate, "Also report the a_0 = 0 prediction");
  inspect_cmd->add_flag("--jsonl", in.jsonl, "One JSON record per hop");
  inspect_cmd->add_flag("--cbt", in.cbt, "Dataset uses the CBT layout");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen(gen, out);
    if (train_cmd->parsed()) return cmd_train(tr, out, err);
    if (eval_cmd->parsed()) return cmd_eval(ev, out, err);
    if (inspect_cmd->parsed()) return cmd_inspect(in, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kUsageError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kUsageError;
}

}  // namespace qann::cli
