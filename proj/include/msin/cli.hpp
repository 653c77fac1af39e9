// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "msin/checkpoint.hpp"
#include "msin/data.hpp"
#include "msin/evaluator.hpp"
#include "msin/model_check.hpp"
#include "msin/trainer.hpp"

namespace msin {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

using KeyValues = std::map<std::string, std::string>;

/// Parses a flat `key = value` file; `#` starts a comment.
inline KeyValues parse_config_text(std::istream& in, const std::string& origin) {
  KeyValues kv;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(origin + ":" + std::to_string(lineno) + ": expected key=value");
    }
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw UsageError(origin + ":" + std::to_string(lineno) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline KeyValues read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file '" + path + "'");
  return parse_config_text(in, path);
}

namespace cli {

inline std::string flag_name(const std::string& key) {
  std::string f = key;
  std::replace(f.begin(), f.end(), '_', '-');
  return "--" + f;
}

inline std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw UsageError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) {
    throw UsageError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw UsageError(key + ": expected true or false, got '" + v + "'");
}

/// Everything a subcommand can be configured with.
struct Settings {
  ModelConfig model;
  TrainConfig train;
  SynthSpec synth;
  SplitConfig split;
  std::string corpus, series, embeddings, checkpoint, out = ".", date, masses;
  std::string eval_split = "test";
  std::string gradcheck_variant = "all";
  std::size_t vocab_max = 5000;
  std::size_t search_budget = 0, search_steps = 200;
  std::size_t k_max = 5, gradcheck_docs = 3;
  double gradcheck_h = 1e-5;
  bool seed_given = false;
};

struct Key {
  std::string name;
  std::string help;
  std::function<void(Settings&, const std::string&)> apply;
};

using S = Settings;
using V = const std::string&;

inline std::vector<Key> model_keys() {
  return {
      {"variant", "msin | lstm_wo | lstm_par", [](S& s, V v) { s.model.variant = parse_variant(v); }},
      {"d_s", "series hidden width", [](S& s, V v) { s.model.d_s = to_size("d_s", v); }},
      {"d_h", "text LSTM width per direction", [](S& s, V v) { s.model.d_h = to_size("d_h", v); }},
      {"d_w", "word embedding width", [](S& s, V v) { s.model.d_w = to_size("d_w", v); }},
      {"d_a", "attention width (0 = d_s)", [](S& s, V v) { s.model.d_a = to_size("d_a", v); }},
      {"max_len", "tokens kept per document", [](S& s, V v) { s.model.max_len = to_size("max_len", v); }},
      {"window", "look-back length m", [](S& s, V v) { s.model.window = to_size("window", v); }},
      {"doc_cap", "documents kept per day", [](S& s, V v) { s.model.daily_doc_cap = to_size("doc_cap", v); }},
      {"dropout", "dropout rate", [](S& s, V v) { s.model.dropout = to_double("dropout", v); }},
      {"l1", "L1 weight penalty", [](S& s, V v) { s.model.l1 = to_double("l1", v); }},
      {"l2", "L2 weight penalty", [](S& s, V v) { s.model.l2 = to_double("l2", v); }},
      {"objective", "next_value | movement", [](S& s, V v) { s.model.objective = parse_objective(v); }},
      {"pool_divisor", "actual_len | max_len",
       [](S& s, V v) { s.model.pool_divisor = parse_pool_divisor(v); }},
  };
}

inline std::vector<Key> train_keys() {
  return {
      {"lr", "Adam learning rate", [](S& s, V v) { s.train.learning_rate = to_double("lr", v); }},
      {"beta1", "Adam beta1", [](S& s, V v) { s.train.beta1 = to_double("beta1", v); }},
      {"beta2", "Adam beta2", [](S& s, V v) { s.train.beta2 = to_double("beta2", v); }},
      {"eps", "Adam epsilon", [](S& s, V v) { s.train.eps = to_double("eps", v); }},
      {"batch_size", "samples per step", [](S& s, V v) { s.train.batch_size = to_size("batch_size", v); }},
      {"max_steps", "optimizer steps", [](S& s, V v) { s.train.max_steps = to_size("max_steps", v); }},
      {"clip_norm", "global gradient norm cap", [](S& s, V v) { s.train.clip_norm = to_double("clip_norm", v); }},
      {"patience", "evaluations without improvement before stopping",
       [](S& s, V v) { s.train.patience = to_size("patience", v); }},
      {"eval_every", "steps between validations", [](S& s, V v) { s.train.eval_every = to_size("eval_every", v); }},
      {"search_budget", "random-search draws before training (0 = off)",
       [](S& s, V v) { s.search_budget = to_size("search_budget", v); }},
      {"search_steps", "steps per search draw", [](S& s, V v) { s.search_steps = to_size("search_steps", v); }},
  };
}

inline std::vector<Key> data_keys() {
  return {
      {"corpus", "corpus JSONL", [](S& s, V v) { s.corpus = v; }},
      {"series", "series CSV", [](S& s, V v) { s.series = v; }},
      {"vocab_max", "vocabulary size including <pad> and <unk>",
       [](S& s, V v) { s.vocab_max = to_size("vocab_max", v); }},
      {"train_until", "last training date (inclusive)", [](S& s, V v) { s.split.train_until = v; }},
      {"valid_until", "last validation date (inclusive)", [](S& s, V v) { s.split.valid_until = v; }},
      {"train_frac", "training fraction when no dates are given",
       [](S& s, V v) { s.split.train_frac = to_double("train_frac", v); }},
      {"valid_frac", "validation fraction when no dates are given",
       [](S& s, V v) { s.split.valid_frac = to_double("valid_frac", v); }},
  };
}

inline Key seed_key() {
  return {"seed", "master seed", [](S& s, V v) {
            s.train.seed = to_size("seed", v);
            s.synth.seed = s.train.seed;
            s.seed_given = true;
          }};
}

inline Key out_key(const std::string& help) {
  return {"out", help, [](S& s, V v) { s.out = v; }};
}

inline std::vector<Key> synth_keys() {
  return {
      {"days", "number of days", [](S& s, V v) { s.synth.n_days = to_size("days", v); }},
      {"docs_min", "fewest documents per day", [](S& s, V v) { s.synth.docs_min = to_size("docs_min", v); }},
      {"docs_max", "most documents per day", [](S& s, V v) { s.synth.docs_max = to_size("docs_max", v); }},
      {"len_min", "shortest document", [](S& s, V v) { s.synth.len_min = to_size("len_min", v); }},
      {"len_max", "longest document", [](S& s, V v) { s.synth.len_max = to_size("len_max", v); }},
      {"background_vocab", "background word count",
       [](S& s, V v) { s.synth.background_vocab = to_size("background_vocab", v); }},
      {"lexicon", "signal words per polarity", [](S& s, V v) { s.synth.lexicon_size = to_size("lexicon", v); }},
      {"one_planted", "exactly one signal document per day",
       [](S& s, V v) { s.synth.one_planted = to_bool("one_planted", v); }},
      {"plant_prob", "per-document signal probability when one_planted is false",
       [](S& s, V v) { s.synth.plant_prob = to_double("plant_prob", v); }},
      {"phi", "AR(1) coefficient", [](S& s, V v) { s.synth.phi = to_double("phi", v); }},
      {"alpha", "signal strength", [](S& s, V v) { s.synth.alpha = to_double("alpha", v); }},
      {"sigma", "noise scale", [](S& s, V v) { s.synth.sigma = to_double("sigma", v); }},
      {"start", "first date", [](S& s, V v) { s.synth.start_date = v; }},
  };
}

/// Registers one string option per key on `app` and returns the merged
/// applier: defaults, then the --config file, then flags.
class KeyedCommand {
 public:
  KeyedCommand(CLI::App* app, std::vector<Key> keys) : app_(app), keys_(std::move(keys)) {
    app_->add_option("--config", config_path_, "key=value file; flags override it");
    for (auto& k : keys_) {
      auto* opt = app_->add_option(flag_name(k.name), values_[k.name], k.help);
      options_[k.name] = opt;
    }
  }

  Settings resolve() const {
    KeyValues merged;
    if (!config_path_.empty()) {
      merged = read_config_file(config_path_);
      for (auto& [key, _] : merged) {
        if (!options_.count(key)) {
          throw UsageError("unknown key '" + key + "' in " + config_path_ + " for subcommand " +
                           app_->get_name());
        }
      }
    }
    for (auto& [key, opt] : options_)
      if (opt->count() > 0) merged[key] = values_.at(key);
    Settings s;
    for (auto& k : keys_) {
      auto it = merged.find(k.name);
      if (it != merged.end()) k.apply(s, it->second);
    }
    return s;
  }

 private:
  CLI::App* app_;
  std::vector<Key> keys_;
  std::string config_path_;
  std::map<std::string, std::string> values_;
  std::map<std::string, CLI::Option*> options_;
};

inline std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

inline std::string file_hash(const std::string& path) {
  const auto bytes = read_bytes(path);
  return hex64(fnv1a(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size())));
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot write '" + path.string() + "'");
  return out;
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DatasetError("cannot create directory '" + dir + "': " + ec.message());
}

inline void require(const std::string& value, const std::string& key) {
  if (value.empty()) throw UsageError(flag_name(key) + " is required");
}

inline nlohmann::json to_json(const SplitConfig& s) {
  return {{"train_until", s.train_until ? nlohmann::json(*s.train_until) : nlohmann::json(nullptr)},
          {"valid_until", s.valid_until ? nlohmann::json(*s.valid_until) : nlohmann::json(nullptr)},
          {"train_frac", s.train_frac},
          {"valid_frac", s.valid_frac},
          {"test_frac", s.test_frac}};
}

inline SplitConfig split_from_json(const nlohmann::json& j) {
  SplitConfig s;
  if (!j.at("train_until").is_null()) s.train_until = j.at("train_until").get<std::string>();
  if (!j.at("valid_until").is_null()) s.valid_until = j.at("valid_until").get<std::string>();
  s.train_frac = j.at("train_frac").get<double>();
  s.valid_frac = j.at("valid_frac").get<double>();
  s.test_frac = j.at("test_frac").get<double>();
  return s;
}

inline void finish_split(SplitConfig& s) {
  if (s.train_frac < 0.0 || s.valid_frac < 0.0 || s.train_frac + s.valid_frac > 1.0) {
    throw UsageError("train_frac and valid_frac must be non-negative and sum to at most 1");
  }
  s.test_frac = 1.0 - s.train_frac - s.valid_frac;
}

// ------------------------------------------------------------------ synth

inline int cmd_synth(const Settings& s, std::ostream& out) {
  s.synth.validate();
  const auto data = synth_generate(s.synth);
  ensure_dir(s.out);
  const auto corpus_path = (std::filesystem::path(s.out) / "corpus.jsonl").string();
  const auto series_path = (std::filesystem::path(s.out) / "series.csv").string();
  {
    auto f = open_out(corpus_path);
    write_corpus(f, data.corpus);
  }
  {
    auto f = open_out(series_path);
    write_series(f, data.series);
  }
  out << "spec " << to_json(s.synth).dump() << '\n';
  out << "corpus " << corpus_path << " fnv1a64 " << file_hash(corpus_path) << '\n';
  out << "series " << series_path << " fnv1a64 " << file_hash(series_path) << '\n';
  return kExitOk;
}

// ------------------------------------------------------------------ train

inline int cmd_train(Settings s, std::ostream& out) {
  require(s.corpus, "corpus");
  require(s.series, "series");
  finish_split(s.split);
  s.train.validate();
  const auto corpus = read_corpus(s.corpus);
  const auto series = read_series(s.series);
  s.model.features = series.features;
  s.model.validate();

  auto prepare = [&](const ModelConfig& c) { return prepare_dataset(corpus, series, c, s.split, s.vocab_max); };
  if (s.search_budget > 0) {
    TrainConfig quick = s.train;
    quick.max_steps = s.search_steps;
    auto provider = [&](const ModelConfig& c) {
      auto ds = prepare(c);
      return std::make_pair(std::move(ds.train), std::move(ds.valid));
    };
    ModelConfig base = s.model;
    auto probe = prepare(base);
    base.vocab_size = probe.vocab.size();
    auto result = random_search(SearchSpace{}, s.search_budget, s.train.seed, base, quick, provider);
    ensure_dir(s.out);
    auto f = open_out(std::filesystem::path(s.out) / "search.csv");
    f << "rank,draw,valid_loss,best_step,d_s,d_h,l1,l2,dropout,window\n";
    for (std::size_t i = 0; i < result.leaderboard.size(); ++i) {
      const auto& e = result.leaderboard[i];
      f << i + 1 << ',' << e.draw << ',' << format_number(e.valid_loss) << ',' << e.best_step << ','
        << e.config.d_s << ',' << e.config.d_h << ',' << format_number(e.config.l1) << ','
        << format_number(e.config.l2) << ',' << format_number(e.config.dropout) << ','
        << e.config.window << '\n';
    }
    out << "search best " << to_json(result.best).dump() << '\n';
    s.model = result.best;
  }

  auto ds = prepare(s.model);
  s.model.vocab_size = ds.vocab.size();
  out << "dataset " << to_json(ds.report).dump() << '\n';

  auto init_rng = make_stream(s.train.seed, "init");
  auto params = init_params(s.model, init_rng);
  if (!s.embeddings.empty()) {
    const auto hits = apply_embeddings(params.embedding, ds.vocab, read_embedding_file(s.embeddings));
    out << "embeddings " << hits << " of " << ds.vocab.size() - 2 << " words found\n";
  }

  auto result = train(ds.train, ds.valid, std::move(params), s.model, s.train,
                      [&](const HistoryRow& row, ModelParams<float>&) {
                        if (!row.valid_loss) return;
                        out << "step " << row.step;
                        if (row.train_loss) out << " train_loss " << format_number(*row.train_loss);
                        out << " valid_loss " << format_number(*row.valid_loss) << '\n';
                      });

  ensure_dir(s.out);
  const auto dir = std::filesystem::path(s.out);
  {
    auto f = open_out(dir / "history.csv");
    write_history(f, result.history);
  }
  Checkpoint ck;
  ck.model = s.model;
  ck.train = s.train;
  ck.meta = {{"step", result.best_step},
             {"steps_run", result.steps},
             {"early_stopped", result.early_stopped},
             {"seed", s.train.seed},
             {"metric", {{"valid_loss", result.best_valid_loss}}},
             {"vocab", ds.vocab.tokens()},
             {"normalizer", to_json(ds.normalizer)},
             {"split", to_json(s.split)},
             {"dataset", to_json(ds.report)}};
  ck.params = std::move(result.params);
  const auto ck_path = (dir / "checkpoint.msn").string();
  save_checkpoint(ck, ck_path);
  out << "best step " << result.best_step << " valid_loss " << format_number(result.best_valid_loss)
      << (result.early_stopped ? " (early stop)" : "") << '\n';
  out << "checkpoint " << ck_path << " fnv1a64 " << file_hash(ck_path) << '\n';
  return kExitOk;
}

// ------------------------------------------------------------------- eval

/// Rebuilds the dataset a checkpoint was trained on.
inline Dataset checkpoint_dataset(const Checkpoint& ck, const Settings& s) {
  require(s.corpus, "corpus");
  require(s.series, "series");
  const auto corpus = read_corpus(s.corpus);
  const auto series = read_series(s.series);
  try {
    Vocabulary vocab(ck.meta.at("vocab").get<std::vector<std::string>>());
    if (vocab.size() != ck.model.vocab_size) {
      throw CheckpointError("stored vocabulary has " + std::to_string(vocab.size()) +
                            " entries, model expects " + std::to_string(ck.model.vocab_size));
    }
    const auto normalizer = normalizer_from_json(ck.meta.at("normalizer"));
    const auto split = split_from_json(ck.meta.at("split"));
    return prepare_dataset(corpus, series, ck.model, split, ck.model.vocab_size, vocab, normalizer);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint metadata incomplete: ") + e.what());
  }
}

inline int cmd_eval(const Settings& s, std::ostream& out) {
  require(s.checkpoint, "checkpoint");
  auto ck = load_checkpoint(s.checkpoint);
  auto ds = checkpoint_dataset(ck, s);
  const std::vector<Sample>* part = nullptr;
  if (s.eval_split == "test") part = &ds.test;
  else if (s.eval_split == "valid") part = &ds.valid;
  else if (s.eval_split == "train") part = &ds.train;
  else throw UsageError("split must be train, valid or test, got '" + s.eval_split + "'");
  if (part->empty()) throw DatasetError("the " + s.eval_split + " split has no samples");

  auto report = rank_report(ck.params, ck.model, *part, s.k_max);
  auto j = to_json(report);
  j["split"] = s.eval_split;
  j["variant"] = to_string(ck.model.variant);
  ensure_dir(s.out);
  const auto dir = std::filesystem::path(s.out);
  {
    auto f = open_out(dir / "report.json");
    f << j.dump(2) << '\n';
  }
  {
    auto f = open_out(dir / "days.jsonl");
    write_day_dump(f, report);
  }
  {
    auto f = open_out(dir / "curve.csv");
    write_curve(f, report);
  }
  out << "split " << s.eval_split << " days " << report.movement.n << " gtd " << report.gtd << '\n';
  out << "movement accuracy " << format_number(report.movement.accuracy) << '\n';
  if (!report.relevance_available) {
    out << "relevance unavailable: " << report.relevance_note << '\n';
  } else {
    for (const auto& [k, pr] : report.per_k)
      out << "k " << k << " precision " << format_number(pr.precision) << " recall "
          << format_number(pr.recall) << '\n';
  }
  out << "wrote " << (dir / "report.json").string() << ", days.jsonl, curve.csv\n";
  return kExitOk;
}

// ------------------------------------------------------------------- rank

inline std::vector<double> parse_masses(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto v = to_double("masses", item);
    if (v < 0.0) throw UsageError("masses must be non-negative");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("--masses needs at least one value");
  return out;
}

/// Documents by descending mass with the 50% cut marked. Document numbers
/// are 1-based.
inline void print_ranking(std::ostream& out, const std::vector<double>& mass,
                          const std::vector<std::string>& texts) {
  const auto selected = select_relevant(mass);
  const auto order = rank_order(mass);
  const int width = mass.size() >= 100 ? 3 : 2;
  out << "rank doc mass   sel text\n";
  double cum = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto j = order[r];
    const bool sel = r < selected.size();
    std::ostringstream line;
    line << std::setw(4) << std::left << r + 1 << ' ' << std::setw(width) << std::setfill('0')
         << std::right << j + 1 << std::setfill(' ') << std::string(4 - std::min(width, 3), ' ')
         << std::fixed << std::setprecision(4) << mass[j] << ' ' << (sel ? '*' : ' ') << "   "
         << (j < texts.size() ? texts[j] : "");
    out << line.str() << '\n';
    if (sel) cum += mass[j];
    if (r + 1 == selected.size()) {
      out << "---- cumulative mass " << std::fixed << std::setprecision(4) << cum
          << " >= 0.5 above this line\n";
      out.unsetf(std::ios::floatfield);
    }
  }
}

inline int cmd_rank(const Settings& s, std::ostream& out) {
  if (!s.masses.empty()) {
    const auto mass = parse_masses(s.masses);
    std::vector<std::string> texts;
    if (!s.corpus.empty() && !s.date.empty()) {
      for (const auto& day : read_corpus(s.corpus))
        if (day.date == s.date)
          for (const auto& h : day.headlines) texts.push_back(h.text);
      if (!texts.empty() && texts.size() != mass.size()) {
        throw UsageError("--masses has " + std::to_string(mass.size()) + " values but " + s.date +
                         " has " + std::to_string(texts.size()) + " documents");
      }
    }
    out << "date " << (s.date.empty() ? "-" : s.date) << " documents " << mass.size()
        << " (masses given)\n";
    print_ranking(out, mass, texts);
    return kExitOk;
  }
  require(s.checkpoint, "checkpoint");
  require(s.date, "date");
  auto ck = load_checkpoint(s.checkpoint);
  if (ck.model.variant == Variant::kLstmPar) {
    throw UsageError("variant lstm_par has no attention to rank documents by");
  }
  auto ds = checkpoint_dataset(ck, s);
  const Sample* sample = nullptr;
  for (const auto* part : {&ds.train, &ds.valid, &ds.test})
    for (const auto& x : *part)
      if (x.window.date == s.date) sample = &x;
  if (sample == nullptr) {
    throw DatasetError("no sample for " + s.date +
                       " (missing from the corpus or series, too early for the window, or no documents)");
  }
  BasicTape<float> tape(false);
  auto pred = forward(tape, *sample, ck.params, ck.model);
  std::vector<double> mass(pred.relevance.values().begin(), pred.relevance.values().end());
  out << "date " << s.date << " documents " << mass.size() << " variant "
      << to_string(ck.model.variant) << '\n';
  print_ranking(out, mass, sample->docs.texts);
  return kExitOk;
}

// -------------------------------------------------------------- gradcheck

inline int cmd_gradcheck(const Settings& s, std::ostream& out) {
  std::vector<Variant> variants;
  if (s.gradcheck_variant == "all") {
    variants = {Variant::kMsin, Variant::kLstmWo, Variant::kLstmPar};
  } else {
    variants = {parse_variant(s.gradcheck_variant)};
  }
  const std::uint64_t seed = s.seed_given ? s.train.seed : 1;
  bool pass = true;
  for (auto v : variants) {
    auto config = tiny_config(v);
    config.dropout = s.model.dropout;
    const auto report = check_model_gradients(config, seed, s.gradcheck_docs, s.gradcheck_h);
    out << "variant " << to_string(v) << '\n';
    for (const auto& t : report.per_tensor) {
      out << "  " << std::left << std::setw(18) << t.name << std::right << std::scientific
          << std::setprecision(2) << t.max_rel_err << (t.max_rel_err < 1e-4 ? "  ok" : "  FAIL")
          << '\n';
      out.unsetf(std::ios::floatfield);
    }
    out << "  worst " << std::scientific << std::setprecision(2) << report.max_rel_err << '\n';
    out.unsetf(std::ios::floatfield);
    pass = pass && report.max_rel_err < 1e-4;
  }
  out << (pass ? "PASS" : "FAIL") << " (bound 1e-4)\n";
  return pass ? kExitOk : kExitNumeric;
}

}  // namespace cli

/// Entry point of the `msin` tool.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  using namespace cli;
  CLI::App app{"MSIN: multi-step text and time-series model"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus and series");
  auto synth_cmd = [&] {
    auto keys = synth_keys();
    keys.push_back(seed_key());
    keys.push_back(out_key("output directory"));
    return KeyedCommand(synth, keys);
  }();

  auto* train_app = app.add_subcommand("train", "train a model and write a checkpoint");
  auto train_cmd = [&] {
    auto keys = model_keys();
    for (auto& k : train_keys()) keys.push_back(k);
    for (auto& k : data_keys()) keys.push_back(k);
    keys.push_back({"embeddings", "pretrained word vectors (word v1 .. vd per line)",
                    [](S& s, V v) { s.embeddings = v; }});
    keys.push_back(seed_key());
    keys.push_back(out_key("output directory"));
    return KeyedCommand(train_app, keys);
  }();

  auto* eval_app = app.add_subcommand("eval", "score a checkpoint on a split");
  KeyedCommand eval_cmd(eval_app, {
      {"checkpoint", "checkpoint file", [](S& s, V v) { s.checkpoint = v; }},
      {"corpus", "corpus JSONL", [](S& s, V v) { s.corpus = v; }},
      {"series", "series CSV", [](S& s, V v) { s.series = v; }},
      {"split", "train | valid | test", [](S& s, V v) { s.eval_split = v; }},
      {"k_max", "largest k for precision/recall", [](S& s, V v) { s.k_max = to_size("k_max", v); }},
      out_key("output directory"),
  });

  auto* rank_app = app.add_subcommand("rank", "rank one day's documents by attention mass");
  KeyedCommand rank_cmd(rank_app, {
      {"checkpoint", "checkpoint file", [](S& s, V v) { s.checkpoint = v; }},
      {"corpus", "corpus JSONL", [](S& s, V v) { s.corpus = v; }},
      {"series", "series CSV", [](S& s, V v) { s.series = v; }},
      {"date", "day to rank", [](S& s, V v) { s.date = v; }},
      {"masses", "debug: comma-separated masses to rank instead of running the model",
       [](S& s, V v) { s.masses = v; }},
  });

  auto* grad_app = app.add_subcommand("gradcheck", "check gradients of the tiny configuration");
  KeyedCommand grad_cmd(grad_app, {
      {"variant", "msin | lstm_wo | lstm_par | all", [](S& s, V v) { s.gradcheck_variant = v; }},
      {"dropout", "dropout rate (must be 0)", [](S& s, V v) { s.model.dropout = to_double("dropout", v); }},
      {"fd_step", "central difference step", [](S& s, V v) { s.gradcheck_h = to_double("fd_step", v); }},
      {"docs", "documents in the random sample", [](S& s, V v) { s.gradcheck_docs = to_size("docs", v); }},
      seed_key(),
  });

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
    }
    if (synth->parsed()) return cmd_synth(synth_cmd.resolve(), out);
    if (train_app->parsed()) return cmd_train(train_cmd.resolve(), out);
    if (eval_app->parsed()) return cmd_eval(eval_cmd.resolve(), out);
    if (rank_app->parsed()) return cmd_rank(rank_cmd.resolve(), out);
    if (grad_app->parsed()) return cmd_gradcheck(grad_cmd.resolve(), out);
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DeterminismError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace msin
