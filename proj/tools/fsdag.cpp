#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "fsdag/checkpoint.hpp"
#include "fsdag/errors.hpp"
#include "fsdag/robusteval.hpp"
#include "fsdag/runconfig.hpp"
#include "fsdag/synthgen.hpp"
#include "fsdag/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fsdag;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

// ---- corpus selection shared by train / eval / robust / ablate ----

struct CorpusArgs {
  std::string dir;
  std::optional<std::size_t> split;  // number of training documents
};

void add_corpus_options(CLI::App* cmd, CorpusArgs& a) {
  cmd->add_option("--corpus", a.dir, "Corpus directory written by `synth`")->required();
  cmd->add_option("--split", a.split, "Training documents taken from the corpus (seeded by the corpus seed)");
}

struct Selected {
  Corpus corpus;
  Split split;
};

Selected select(const CorpusArgs& a, bool need_split) {
  Selected s{read_corpus(a.dir), {}};
  const std::size_t n = s.corpus.documents.size();
  if (n == 0) throw Error("corpus " + a.dir + " is empty");
  std::size_t n_train = a.split.value_or(s.corpus.manifest.n_train);
  if (!a.split && !need_split) {
    s.split.test.resize(n);
    std::iota(s.split.test.begin(), s.split.test.end(), std::size_t{0});
    return s;
  }
  if (n_train == 0) n_train = std::min<std::size_t>(5, n - 1);
  if (n_train >= n) throw UsageError("--split " + std::to_string(n_train) + " leaves no test documents");
  s.split = split(n, n_train, s.corpus.manifest.seed);
  return s;
}

std::vector<Document> pick(const std::vector<Document>& docs, const std::vector<std::size_t>& idx) {
  std::vector<Document> out;
  for (auto i : idx) out.push_back(docs[i]);
  return out;
}

// ---- run configuration ----

struct ConfigArgs {
  std::string file;
  std::vector<std::string> settings;
  std::string ablate;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
};

void add_config_options(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("--config", a.file, "JSON config with flat dotted keys");
  cmd->add_option("--set", a.settings, "Override one key, e.g. --set train.epochs=60");
  cmd->add_option("--ablate", a.ablate, "Ablation preset (skeleton, pooling, visual, positional, full, no-visual, ...)");
  cmd->add_option("--seed", a.seed, "Training seed");
  cmd->add_option("--epochs", a.epochs, "Training epochs");
}

RunConfig resolve(const ConfigArgs& a, const LabelSet& labels) {
  RunConfig cfg = a.file.empty() ? RunConfig{} : load_run_config(a.file);
  cfg.model.classes = labels.names;
  try {
    for (const auto& s : a.settings) apply_setting(cfg, s);
    if (!a.ablate.empty()) {
      ablation_preset(a.ablate);
      cfg.ablation = a.ablate;
    }
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.epochs) cfg.train.epochs = *a.epochs;
  cfg.apply_ablation();
  validate(cfg.model);
  validate(cfg.train);
  return cfg;
}

json provenance(const RunConfig& cfg, const std::string& corpus, const Split& s) {
  json j = to_flat_json(cfg);
  j["model.classes"] = cfg.model.classes;
  j["corpus"] = fs::absolute(corpus).lexically_normal().string();
  j["split.train"] = s.train;
  j["split.test"] = s.test;
  return j;
}

struct TrainOutcome {
  ModelParams params;
  EpochLog last;
};

TrainOutcome run_training(const std::vector<Document>& docs, const RunConfig& cfg, const fs::path& out) {
  fs::create_directories(out);
  std::ofstream log(out / "train_log.jsonl");
  if (!log) throw Error("cannot write " + (out / "train_log.jsonl").string());
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochLog& e) { log << e.to_json().dump() << '\n' << std::flush; };
  hooks.on_checkpoint = [&](std::size_t epoch, const ModelParams& p) {
    fs::create_directories(out / "checkpoints");
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%04zu.ckpt", epoch);
    save_checkpoint(p, cfg.model, out / "checkpoints" / name);
  };
  TextEmbedder embedder(cfg.model.text);
  auto result = train(docs, cfg.train, cfg.model, embedder, hooks);
  save_checkpoint(result.params, cfg.model, out / "model.ckpt");
  return {std::move(result.params), result.log.back()};
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

// ---- commands ----

struct SynthArgs {
  std::string templ = "basic8";
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::size_t n_train = 5;
  std::string out;
};

int cmd_synth(const SynthArgs& a) {
  if (a.n == 0) throw UsageError("--n must be at least 1");
  const bool builtin = fs::path(a.templ).extension() != ".json";
  const TemplateSpec spec = builtin ? builtin_template(a.templ) : load_template(a.templ);
  const auto docs = generate(spec, a.n, a.seed);
  CorpusManifest m;
  m.seed = a.seed;
  m.template_id = spec.id;
  m.n_train = a.n > 1 ? std::min(a.n_train, a.n - 1) : 0;
  m.n_test = a.n - m.n_train;
  write_corpus(a.out, docs, m);
  std::size_t regions = 0;
  for (const auto& d : docs) regions += d.size();
  std::cout << "wrote " << docs.size() << " documents (" << m.n_train << " train / " << m.n_test << " test) to "
            << a.out << "\ntemplate " << spec.id << ", " << spec.n_classes() << " key classes, "
            << fixed(static_cast<double>(regions) / static_cast<double>(docs.size()), 1) << " regions per document\n";
  return 0;
}

int cmd_train(const CorpusArgs& c, const ConfigArgs& k, const std::string& out) {
  const auto sel = select(c, true);
  const auto cfg = resolve(k, sel.corpus.documents.front().labels);
  fs::create_directories(out);
  write_json(fs::path(out) / "config.json", provenance(cfg, c.dir, sel.split));
  const auto docs = pick(sel.corpus.documents, sel.split.train);
  const auto res = run_training(docs, cfg, out);
  std::cout << "trained " << cfg.train.epochs << " epochs on " << docs.size() << " documents (" << cfg.ablation
            << "); final loss " << fixed(res.last.loss) << ", train macro F1 " << fixed(res.last.macro_f1) << "\n"
            << "checkpoint " << (fs::path(out) / "model.ckpt").string() << "\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string out;
  double p = 0.1;
  std::uint64_t seed = 0;
  std::string confusions;
};

int cmd_eval(const CorpusArgs& c, const EvalArgs& e, bool robust) {
  if (robust && !(e.p >= 0.0 && e.p <= 1.0)) throw UsageError("--p must lie in [0, 1]");
  if (!fs::exists(e.checkpoint)) throw Error("checkpoint " + e.checkpoint + " does not exist");
  const auto ck = load_checkpoint(e.checkpoint);
  const auto sel = select(c, false);
  const auto docs = pick(sel.corpus.documents, sel.split.test);
  TextEmbedder embedder(ck.config.text);
  fs::create_directories(e.out);
  json echo{{"checkpoint", fs::absolute(e.checkpoint).lexically_normal().string()},
            {"corpus", fs::absolute(c.dir).lexically_normal().string()},
            {"documents", sel.split.test}};
  EvalReport rep;
  if (robust) {
    ConfusionTable table = ConfusionTable::defaults();
    if (!e.confusions.empty()) {
      std::ifstream in(e.confusions);
      if (!in) throw Error("cannot open " + e.confusions);
      table = ConfusionTable::from_json(json::parse(in));
    }
    rep = robustness_report(ck.params, ck.config, embedder, docs, e.p, table, e.seed);
    echo["p"] = e.p;
    echo["seed"] = e.seed;
    echo["confusions"] = table.to_json();
    write_report(rep, fs::path(e.out) / "robust_report.json");
    std::cout << "clean macro F1 " << fixed(*rep.clean_macro_f1) << ", with OCR errors (p=" << e.p << ") "
              << fixed(rep.macro_f1) << ", drop " << fixed(*rep.drop) << "\n";
  } else {
    rep = evaluate(ck.params, ck.config, embedder, docs);
    write_report(rep, fs::path(e.out) / "eval_report.json");
    std::cout << "macro F1 " << fixed(rep.macro_f1) << " on " << docs.size() << " documents\n";
    for (const auto& s : rep.per_class)
      std::cout << "  " << std::left << std::setw(14) << s.name << " P " << fixed(s.precision, 3) << "  R "
                << fixed(s.recall, 3) << "  F1 " << fixed(s.f1, 3) << "  n=" << s.support << "\n";
  }
  write_json(fs::path(e.out) / (robust ? "robust_config.json" : "eval_config.json"), echo);
  return 0;
}

struct AblateArgs {
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<std::string> rows = standard_ablation_rows();
  std::string out;
};

int cmd_ablate(const CorpusArgs& c, ConfigArgs k, const AblateArgs& a) {
  if (!k.ablate.empty()) throw UsageError("ablate runs its own rows; use --rows instead of --ablate");
  if (a.seeds.empty()) throw UsageError("--seeds must not be empty");
  try {
    for (const auto& r : a.rows) ablation_preset(r);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const auto sel = select(c, true);
  const auto train_docs = pick(sel.corpus.documents, sel.split.train);
  const auto test_docs = pick(sel.corpus.documents, sel.split.test);
  fs::create_directories(a.out);

  json table = json::array();
  std::map<std::string, double> means;
  for (const auto& row : a.rows) {
    std::vector<double> scores;
    for (auto seed : a.seeds) {
      k.ablate = row;
      k.seed = seed;
      const auto cfg = resolve(k, sel.corpus.documents.front().labels);
      const fs::path dir = fs::path(a.out) / row / ("seed_" + std::to_string(seed));
      fs::create_directories(dir);
      write_json(dir / "config.json", provenance(cfg, c.dir, sel.split));
      const auto res = run_training(train_docs, cfg, dir);
      TextEmbedder embedder(cfg.model.text);
      const auto rep = evaluate(res.params, cfg.model, embedder, test_docs);
      write_report(rep, dir / "eval_report.json");
      scores.push_back(rep.macro_f1);
      std::cerr << row << " seed " << seed << ": macro F1 " << fixed(rep.macro_f1) << "\n";
    }
    double mean = 0;
    for (double s : scores) mean += s;
    mean /= static_cast<double>(scores.size());
    means[row] = mean;
    table.push_back({{"row", ablation_preset(row).row}, {"name", row}, {"macro_f1", scores}, {"mean_macro_f1", mean}});
  }
  const std::string base = a.rows.front();
  std::ostringstream md;
  md << "| # | configuration | mean macro F1 | gain vs " << base << " |\n|---|---|---|---|\n";
  for (auto& r : table) {
    const std::string name = r["name"];
    r["gain"] = means[name] - means[base];
    md << "| " << r["row"].get<std::string>() << " | " << name << " | " << fixed(means[name]) << " | "
       << (name == base ? std::string("NA") : fixed(means[name] - means[base])) << " |\n";
  }
  write_json(fs::path(a.out) / "ablation.json", json{{"seeds", a.seeds}, {"baseline", base}, {"rows", table}});
  write_text(fs::path(a.out) / "ablation.md", md.str());
  std::cout << md.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot document graph extraction: synthesize, train, evaluate and ablate"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic corpus");
  s->add_option("--template", synth.templ, "Built-in template name or template JSON file")->capture_default_str();
  s->add_option("--n", synth.n, "Number of documents")->required();
  s->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  s->add_option("--n-train", synth.n_train, "Training documents recorded in the manifest")->capture_default_str();
  s->add_option("--out", synth.out, "Output directory")->required();

  CorpusArgs corpus;
  ConfigArgs config;
  std::string train_out;
  auto* t = app.add_subcommand("train", "Train a model on the training split");
  add_corpus_options(t, corpus);
  add_config_options(t, config);
  t->add_option("--out", train_out, "Run directory")->required();

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_corpus_options(e, corpus);
  e->add_option("--checkpoint", eval.checkpoint, "Model checkpoint")->required();
  e->add_option("--out", eval.out, "Report directory")->required();

  auto* r = app.add_subcommand("robust", "Evaluate clean and with injected OCR errors");
  add_corpus_options(r, corpus);
  r->add_option("--checkpoint", eval.checkpoint, "Model checkpoint")->required();
  r->add_option("--out", eval.out, "Report directory")->required();
  r->add_option("--p", eval.p, "Per-word error probability")->capture_default_str();
  r->add_option("--seed", eval.seed, "Perturbation seed")->capture_default_str();
  r->add_option("--confusions", eval.confusions, "Confusion table JSON (character -> replacements)");

  AblateArgs ablate;
  auto* a = app.add_subcommand("ablate", "Train and evaluate the ablation rows");
  add_corpus_options(a, corpus);
  a->add_option("--config", config.file, "JSON config with flat dotted keys");
  a->add_option("--set", config.settings, "Override one key, e.g. --set train.epochs=60");
  a->add_option("--epochs", config.epochs, "Training epochs");
  a->add_option("--seeds", ablate.seeds, "Training seeds")->delimiter(',')->capture_default_str();
  a->add_option("--rows", ablate.rows, "Ablation presets to run")->delimiter(',')->capture_default_str();
  a->add_option("--out", ablate.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return 2;
  }

  try {
    if (*s) return cmd_synth(synth);
    if (*t) return cmd_train(corpus, config, train_out);
    if (*e) return cmd_eval(corpus, eval, false);
    if (*r) return cmd_eval(corpus, eval, true);
    if (*a) return cmd_ablate(corpus, config, ablate);
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    return 2;
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 2;
}
