// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "msin/model.hpp"
#include "msin/rng.hpp"

namespace msin {

// ------------------------------------------------------------------ dates

/// Parses a strict YYYY-MM-DD calendar date.
inline std::chrono::year_month_day parse_date(std::string_view s) {
  auto bad = [&] { return DatasetError("invalid date '" + std::string(s) + "'"); };
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') throw bad();
  int y = 0;
  unsigned m = 0, d = 0;
  auto num = [&](std::size_t at, std::size_t len, auto& out) {
    auto r = std::from_chars(s.data() + at, s.data() + at + len, out);
    if (r.ec != std::errc() || r.ptr != s.data() + at + len) throw bad();
  };
  num(0, 4, y);
  num(5, 2, m);
  num(8, 2, d);
  std::chrono::year_month_day ymd{std::chrono::year(y), std::chrono::month(m),
                                  std::chrono::day(d)};
  if (!ymd.ok()) throw bad();
  return ymd;
}

inline std::string format_date(std::chrono::year_month_day d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", int(d.year()), unsigned(d.month()),
                unsigned(d.day()));
  return buf;
}

inline std::string add_days(const std::string& date, int days) {
  auto sd = std::chrono::sys_days(parse_date(date)) + std::chrono::days(days);
  return format_date(std::chrono::year_month_day(sd));
}

/// Shortest decimal text that reads back to the same double.
inline std::string format_number(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

// ----------------------------------------------------------------- corpus

struct Headline {
  std::string text;
  std::optional<bool> relevant;
};

struct CorpusDay {
  std::string date;
  std::vector<Headline> headlines;  // release order
};

using Corpus = std::vector<CorpusDay>;

inline void check_corpus_order(const Corpus& corpus) {
  for (std::size_t i = 1; i < corpus.size(); ++i) {
    if (!(corpus[i - 1].date < corpus[i].date)) {
      throw DatasetError("corpus dates not strictly increasing at day " + std::to_string(i) +
                         " (" + corpus[i - 1].date + " then " + corpus[i].date + ")");
    }
  }
}

inline Corpus parse_corpus(std::istream& in, const std::string& origin = "corpus") {
  Corpus corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DatasetError(where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("date") || !j["date"].is_string() ||
        !j.contains("headlines") || !j["headlines"].is_array()) {
      throw DatasetError(where + ": expected {\"date\": ..., \"headlines\": [...]}");
    }
    CorpusDay day;
    day.date = format_date(parse_date(j["date"].get<std::string>()));
    for (const auto& h : j["headlines"]) {
      if (!h.is_object() || !h.contains("text") || !h["text"].is_string()) {
        throw DatasetError(where + ": headline without text");
      }
      Headline hl{h["text"].get<std::string>(), std::nullopt};
      if (h.contains("relevant") && !h["relevant"].is_null()) {
        if (!h["relevant"].is_boolean()) throw DatasetError(where + ": relevant must be bool");
        hl.relevant = h["relevant"].get<bool>();
      }
      day.headlines.push_back(std::move(hl));
    }
    corpus.push_back(std::move(day));
  }
  check_corpus_order(corpus);
  return corpus;
}

inline Corpus read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open corpus '" + path + "'");
  return parse_corpus(in, path);
}

inline void write_corpus(std::ostream& out, const Corpus& corpus) {
  for (const auto& day : corpus) {
    nlohmann::json hs = nlohmann::json::array();
    for (const auto& h : day.headlines) {
      hs.push_back({{"text", h.text},
                    {"relevant", h.relevant ? nlohmann::json(*h.relevant) : nlohmann::json()}});
    }
    nlohmann::json j = {{"date", day.date}, {"headlines", hs}};
    out << j.dump() << '\n';
  }
}

inline void write_corpus(const std::string& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write corpus '" + path + "'");
  write_corpus(out, corpus);
}

// ----------------------------------------------------------------- series

struct Series {
  std::vector<std::string> dates;
  std::size_t features = 1;
  std::vector<double> values;  // rows x features

  std::size_t size() const { return dates.size(); }
  double at(std::size_t row, std::size_t f = 0) const { return values[row * features + f]; }
};

inline Series parse_series(std::istream& in, const std::string& origin = "series") {
  Series s;
  std::string line;
  std::size_t lineno = 0;
  auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::stringstream ss(l);
    std::string c;
    while (std::getline(ss, c, ',')) {
      while (!c.empty() && (c.back() == '\r' || c.back() == ' ')) c.pop_back();
      while (!c.empty() && c.front() == ' ') c.erase(c.begin());
      cells.push_back(c);
    }
    return cells;
  };
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto cells = split(line);
    const std::string where = origin + ":" + std::to_string(lineno);
    if (!header) {
      if (cells.size() < 2 || cells[0] != "date") {
        throw DatasetError(where + ": header must be date,value or date,v1..vD");
      }
      s.features = cells.size() - 1;
      header = true;
      continue;
    }
    if (cells.size() != s.features + 1) {
      throw DatasetError(where + ": expected " + std::to_string(s.features + 1) + " columns");
    }
    s.dates.push_back(format_date(parse_date(cells[0])));
    for (std::size_t f = 1; f < cells.size(); ++f) {
      double v = 0.0;
      const auto& c = cells[f];
      auto r = std::from_chars(c.data(), c.data() + c.size(), v);
      if (r.ec != std::errc() || r.ptr != c.data() + c.size() || !std::isfinite(v)) {
        throw DatasetError(where + ": bad value '" + c + "'");
      }
      s.values.push_back(v);
    }
    if (s.dates.size() > 1 && !(s.dates[s.dates.size() - 2] < s.dates.back())) {
      throw DatasetError(where + ": series dates not strictly increasing");
    }
  }
  if (!header) throw DatasetError(origin + ": empty series file");
  return s;
}

inline Series read_series(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open series '" + path + "'");
  return parse_series(in, path);
}

inline void write_series(std::ostream& out, const Series& s) {
  out << "date";
  if (s.features == 1) {
    out << ",value";
  } else {
    for (std::size_t f = 1; f <= s.features; ++f) out << ",v" << f;
  }
  out << '\n';
  for (std::size_t i = 0; i < s.size(); ++i) {
    out << s.dates[i];
    for (std::size_t f = 0; f < s.features; ++f) out << ',' << format_number(s.at(i, f));
    out << '\n';
  }
}

inline void write_series(const std::string& path, const Series& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write series '" + path + "'");
  write_series(out, s);
}

// ------------------------------------------------------------------- text

/// Lowercases and splits on runs of non-alphanumeric ASCII. Bytes >= 0x80
/// are kept as word characters so UTF-8 words stay whole. max_tokens = 0
/// keeps everything.
inline std::vector<std::string> tokenize(std::string_view text, std::size_t max_tokens = 0) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (unsigned char c : text) {
    if (max_tokens && out.size() >= max_tokens) break;
    if (c >= 0x80 || std::isalnum(c)) {
      cur.push_back(static_cast<char>(c >= 'A' && c <= 'Z' ? c - 'A' + 'a' : c));
    } else {
      flush();
    }
  }
  flush();
  if (max_tokens && out.size() > max_tokens) out.resize(max_tokens);
  return out;
}

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnkId = 1;

class Vocabulary {
 public:
  Vocabulary() : words_{"<pad>", "<unk>"} {}

  explicit Vocabulary(std::vector<std::string> words) : words_{"<pad>", "<unk>"} {
    for (auto& w : words) add(std::move(w));
  }

  std::int32_t id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnkId : it->second;
  }
  const std::string& word(std::int32_t id) const { return words_.at(id); }
  std::size_t size() const { return words_.size(); }
  bool contains(const std::string& word) const { return index_.count(word) != 0; }

  /// Real tokens in id order (ids 2..).
  std::vector<std::string> tokens() const { return {words_.begin() + 2, words_.end()}; }

 private:
  void add(std::string w) {
    if (index_.count(w) || w == "<pad>" || w == "<unk>") {
      throw VocabularyError("duplicate vocabulary entry '" + w + "'");
    }
    index_.emplace(w, static_cast<std::int32_t>(words_.size()));
    words_.push_back(std::move(w));
  }

  std::vector<std::string> words_;
  std::unordered_map<std::string, std::int32_t> index_;
};

/// Most frequent tokens first, ties lexicographic, up to max_size - 2 real
/// entries. When `allowed` is given only its words are eligible.
inline Vocabulary build_vocab(const std::vector<std::vector<std::string>>& documents,
                              std::size_t max_size = 5000,
                              const std::unordered_set<std::string>* allowed = nullptr) {
  if (max_size < 2) throw VocabularyError("vocabulary size must be >= 2");
  std::map<std::string, std::size_t> counts;
  for (const auto& doc : documents)
    for (const auto& t : doc)
      if (!allowed || allowed->count(t)) ++counts[t];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > max_size - 2) ranked.resize(max_size - 2);
  std::vector<std::string> words;
  for (auto& r : ranked) words.push_back(r.first);
  return Vocabulary(std::move(words));
}

/// Keeps the last `cap` headlines of the day.
inline std::vector<Headline> cap_daily_docs(const std::vector<Headline>& docs,
                                            std::size_t cap = 25) {
  if (docs.size() <= cap) return docs;
  return {docs.end() - static_cast<std::ptrdiff_t>(cap), docs.end()};
}

/// Packs tokenized documents into a padded batch of width max_len.
inline DocumentBatch make_batch(const std::vector<std::vector<std::string>>& docs,
                                const Vocabulary& vocab, std::size_t max_len,
                                std::vector<std::optional<bool>> relevant = {},
                                std::vector<std::string> texts = {}) {
  DocumentBatch b;
  b.max_len = max_len;
  b.tokens.assign(docs.size() * max_len, kPadId);
  for (std::size_t j = 0; j < docs.size(); ++j) {
    const std::size_t len = std::min(docs[j].size(), max_len);
    for (std::size_t l = 0; l < len; ++l) b.tokens[j * max_len + l] = vocab.id(docs[j][l]);
    b.lengths.push_back(len);
  }
  b.mask.assign(docs.size(), 1);
  b.relevant = relevant.empty() ? std::vector<std::optional<bool>>(docs.size()) : relevant;
  b.texts = std::move(texts);
  return b;
}

// --------------------------------------------------------------- windowing

/// Per-feature z-score parameters fitted on the training period.
struct Normalizer {
  std::vector<double> mean{0.0};
  std::vector<double> stddev{1.0};

  double apply(double v, std::size_t f) const { return (v - mean[f]) / stddev[f]; }
  double invert(double z, std::size_t f) const { return z * stddev[f] + mean[f]; }

  static Normalizer fit(const Series& s, std::size_t rows) {
    Normalizer n;
    n.mean.assign(s.features, 0.0);
    n.stddev.assign(s.features, 1.0);
    if (rows == 0) return n;
    for (std::size_t f = 0; f < s.features; ++f) {
      double m = 0.0;
      for (std::size_t i = 0; i < rows; ++i) m += s.at(i, f);
      m /= double(rows);
      double v = 0.0;
      for (std::size_t i = 0; i < rows; ++i) v += (s.at(i, f) - m) * (s.at(i, f) - m);
      const double sd = std::sqrt(v / double(rows));
      n.mean[f] = m;
      n.stddev[f] = sd > 1e-12 ? sd : 1.0;
    }
    return n;
  }
};

inline nlohmann::json to_json(const Normalizer& n) {
  return {{"mean", n.mean}, {"std", n.stddev}};
}

inline Normalizer normalizer_from_json(const nlohmann::json& j) {
  Normalizer n;
  n.mean = j.at("mean").get<std::vector<double>>();
  n.stddev = j.at("std").get<std::vector<double>>();
  return n;
}

enum class Split { kTrain, kValid, kTest };

/// Either date boundaries (inclusive) or fractions by sample order.
struct SplitConfig {
  std::optional<std::string> train_until;
  std::optional<std::string> valid_until;
  double train_frac = 0.70;
  double valid_frac = 0.15;
  double test_frac = 0.15;
};

struct DatasetReport {
  std::size_t days = 0;
  std::size_t samples = 0;
  std::size_t skipped_no_series = 0;   // corpus date absent from the series
  std::size_t skipped_history = 0;     // fewer than m prior series values
  std::size_t skipped_no_docs = 0;     // no non-empty document after capping
  std::size_t dropped_empty_docs = 0;  // documents with no tokens
  std::size_t capped_docs = 0;         // documents removed by the daily cap
  std::size_t train = 0, valid = 0, test = 0;

  std::size_t skipped() const { return skipped_no_series + skipped_history + skipped_no_docs; }
};

inline nlohmann::json to_json(const DatasetReport& r) {
  return {{"days", r.days},
          {"samples", r.samples},
          {"skipped_no_series", r.skipped_no_series},
          {"skipped_history", r.skipped_history},
          {"skipped_no_docs", r.skipped_no_docs},
          {"dropped_empty_docs", r.dropped_empty_docs},
          {"capped_docs", r.capped_docs},
          {"train", r.train},
          {"valid", r.valid},
          {"test", r.test}};
}

/// One eligible day before vocabulary lookup.
struct DayCandidate {
  std::size_t series_row = 0;
  std::string date;
  std::vector<std::vector<std::string>> tokens;
  std::vector<std::optional<bool>> relevant;
  std::vector<std::string> texts;
};

/// Pairs every corpus day with its m preceding series values. Days failing
/// alignment, history or document requirements are skipped and counted.
inline std::vector<DayCandidate> eligible_days(const Corpus& corpus, const Series& series,
                                               const ModelConfig& config,
                                               DatasetReport& report) {
  std::unordered_map<std::string, std::size_t> row;
  for (std::size_t i = 0; i < series.size(); ++i) row.emplace(series.dates[i], i);
  std::vector<DayCandidate> out;
  for (const auto& day : corpus) {
    ++report.days;
    auto it = row.find(day.date);
    if (it == row.end()) {
      ++report.skipped_no_series;
      continue;
    }
    if (it->second < config.window) {
      ++report.skipped_history;
      continue;
    }
    auto kept = cap_daily_docs(day.headlines, config.daily_doc_cap);
    report.capped_docs += day.headlines.size() - kept.size();
    DayCandidate c;
    c.series_row = it->second;
    c.date = day.date;
    for (auto& h : kept) {
      auto toks = tokenize(h.text, config.max_len);
      if (toks.empty()) {
        ++report.dropped_empty_docs;
        continue;
      }
      c.tokens.push_back(std::move(toks));
      c.relevant.push_back(h.relevant);
      c.texts.push_back(h.text);
    }
    if (c.tokens.empty()) {
      ++report.skipped_no_docs;
      continue;
    }
    out.push_back(std::move(c));
  }
  return out;
}

inline std::vector<Split> assign_splits(const std::vector<DayCandidate>& days,
                                        const SplitConfig& split) {
  std::vector<Split> out(days.size(), Split::kTrain);
  if (split.train_until || split.valid_until) {
    if (!split.train_until || !split.valid_until) {
      throw UsageError("train_until and valid_until must be given together");
    }
    const auto tu = format_date(parse_date(*split.train_until));
    const auto vu = format_date(parse_date(*split.valid_until));
    if (vu < tu) throw UsageError("valid_until precedes train_until");
    for (std::size_t i = 0; i < days.size(); ++i) {
      out[i] = days[i].date <= tu ? Split::kTrain
               : days[i].date <= vu ? Split::kValid
                                    : Split::kTest;
    }
    return out;
  }
  const double total = split.train_frac + split.valid_frac + split.test_frac;
  if (split.train_frac < 0 || split.valid_frac < 0 || split.test_frac < 0 ||
      std::abs(total - 1.0) > 1e-9) {
    throw UsageError("split fractions must be non-negative and sum to 1");
  }
  const auto n = days.size();
  const auto n_train = static_cast<std::size_t>(std::floor(split.train_frac * n + 1e-9));
  const auto n_valid = static_cast<std::size_t>(std::floor(split.valid_frac * n + 1e-9));
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = i < n_train ? Split::kTrain : i < n_train + n_valid ? Split::kValid : Split::kTest;
  }
  return out;
}

inline Sample build_sample(const DayCandidate& day, const Series& series,
                           const Normalizer& norm, const Vocabulary& vocab,
                           const ModelConfig& config) {
  Sample s;
  const std::size_t m = config.window, D = series.features, t = day.series_row;
  s.window.features = D;
  s.window.values.resize(m * D);
  for (std::size_t l = 0; l < m; ++l)
    for (std::size_t f = 0; f < D; ++f)
      s.window.values[l * D + f] = static_cast<float>(norm.apply(series.at(t - m + l, f), f));
  s.window.target = static_cast<float>(norm.apply(series.at(t, 0), 0));
  s.window.prev = static_cast<float>(norm.apply(series.at(t - 1, 0), 0));
  s.window.up = series.at(t, 0) - series.at(t - 1, 0) >= 0.0;
  s.window.date = day.date;
  s.docs = make_batch(day.tokens, vocab, config.max_len, day.relevant, day.texts);
  return s;
}

struct Dataset {
  Vocabulary vocab;
  Normalizer normalizer;
  std::vector<Sample> train, valid, test;
  DatasetReport report;
};

/// Windows, splits and tokenizes a corpus against its series. The
/// vocabulary (unless given) and the normalizer are fitted on the training
/// period only.
inline Dataset prepare_dataset(const Corpus& corpus, const Series& series,
                               const ModelConfig& config, const SplitConfig& split,
                               std::size_t vocab_max = 5000,
                               const std::optional<Vocabulary>& vocab = std::nullopt,
                               const std::optional<Normalizer>& normalizer = std::nullopt,
                               const std::unordered_set<std::string>* allowed = nullptr) {
  if (series.features != config.features) {
    throw DatasetError("series has " + std::to_string(series.features) +
                       " feature columns, model expects " + std::to_string(config.features));
  }
  Dataset ds;
  auto days = eligible_days(corpus, series, config, ds.report);
  if (days.empty()) {
    throw DatasetError("no samples: " + std::to_string(ds.report.days) + " corpus days, " +
                       std::to_string(ds.report.skipped_no_series) + " without series, " +
                       std::to_string(ds.report.skipped_history) + " without history, " +
                       std::to_string(ds.report.skipped_no_docs) + " without documents");
  }
  auto splits = assign_splits(days, split);
  std::vector<std::vector<std::string>> train_docs;
  std::size_t last_train_row = 0;
  bool any_train = false;
  for (std::size_t i = 0; i < days.size(); ++i) {
    if (splits[i] != Split::kTrain) continue;
    any_train = true;
    last_train_row = days[i].series_row;
    train_docs.insert(train_docs.end(), days[i].tokens.begin(), days[i].tokens.end());
  }
  if (vocab) {
    ds.vocab = *vocab;
  } else {
    if (!any_train) throw DatasetError("training split is empty");
    ds.vocab = build_vocab(train_docs, vocab_max, allowed);
  }
  ds.normalizer = normalizer ? *normalizer
                             : Normalizer::fit(series, any_train ? last_train_row + 1 : series.size());
  for (std::size_t i = 0; i < days.size(); ++i) {
    auto s = build_sample(days[i], series, ds.normalizer, ds.vocab, config);
    (splits[i] == Split::kTrain ? ds.train : splits[i] == Split::kValid ? ds.valid : ds.test)
        .push_back(std::move(s));
  }
  ds.report.samples = days.size();
  ds.report.train = ds.train.size();
  ds.report.valid = ds.valid.size();
  ds.report.test = ds.test.size();
  return ds;
}

// -------------------------------------------------------------- embeddings

struct EmbeddingFile {
  std::size_t dim = 0;
  std::unordered_map<std::string, std::vector<float>> vectors;
};

/// Reads a whitespace-separated "word v1 .. vd" file (GloVe text format).
inline EmbeddingFile read_embedding_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open embedding file '" + path + "'");
  EmbeddingFile e;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string word;
    if (!(ss >> word)) continue;
    std::vector<float> v;
    float x;
    while (ss >> x) v.push_back(x);
    if (v.empty()) throw DatasetError(path + ":" + std::to_string(lineno) + ": no vector");
    if (e.dim == 0) e.dim = v.size();
    if (v.size() != e.dim) {
      throw DatasetError(path + ":" + std::to_string(lineno) + ": expected " +
                         std::to_string(e.dim) + " values, got " + std::to_string(v.size()));
    }
    e.vectors.emplace(std::move(word), std::move(v));
  }
  if (e.dim == 0) throw DatasetError("embedding file '" + path + "' is empty");
  return e;
}

/// Copies file vectors into the rows of known words; returns the hit count.
inline std::size_t apply_embeddings(EmbeddingTable<float>& table, const Vocabulary& vocab,
                                    const EmbeddingFile& file) {
  if (file.dim != table.dim()) {
    throw DatasetError("embedding file has dimension " + std::to_string(file.dim) +
                       ", model uses " + std::to_string(table.dim()));
  }
  std::size_t hits = 0;
  for (std::size_t id = 2; id < vocab.size(); ++id) {
    auto it = file.vectors.find(vocab.word(static_cast<std::int32_t>(id)));
    if (it == file.vectors.end()) continue;
    for (std::size_t k = 0; k < file.dim; ++k) table.table.at(id, k) = it->second[k];
    ++hits;
  }
  return hits;
}

// --------------------------------------------------------------- synthetic

struct SynthSpec {
  std::size_t n_days = 2200;
  std::size_t docs_min = 10, docs_max = 10;
  std::size_t len_min = 8, len_max = 8;
  std::size_t background_vocab = 500;
  std::size_t lexicon_size = 10;
  bool one_planted = true;   // exactly one signal document per day
  double plant_prob = 0.1;   // per-document probability otherwise
  double phi = 0.5;
  double alpha = 1.0;
  double sigma = 0.1;
  std::uint64_t seed = 42;
  std::string start_date = "2006-01-01";

  void validate() const {
    if (n_days < 1) throw UsageError("n_days must be >= 1");
    if (docs_min < 1 || docs_max < docs_min) throw UsageError("bad document count range");
    if (len_min < 1 || len_max < len_min) throw UsageError("bad document length range");
    if (background_vocab < 1 || lexicon_size < 1) throw UsageError("vocabularies must be non-empty");
    if (!(phi >= 0.0 && phi < 1.0)) throw UsageError("phi must lie in [0, 1)");
    if (sigma < 0.0) throw UsageError("sigma must be >= 0");
    if (!(plant_prob >= 0.0 && plant_prob <= 1.0)) throw UsageError("plant_prob must lie in [0, 1]");
    parse_date(start_date);
  }

  std::string background_token(std::size_t i) const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "w%03zu", i);
    return buf;
  }
  std::string positive_token(std::size_t i) const { return "pos" + std::to_string(i); }
  std::string negative_token(std::size_t i) const { return "neg" + std::to_string(i); }
};

inline nlohmann::json to_json(const SynthSpec& s) {
  return {{"n_days", s.n_days},         {"docs_min", s.docs_min},
          {"docs_max", s.docs_max},     {"len_min", s.len_min},
          {"len_max", s.len_max},       {"background_vocab", s.background_vocab},
          {"lexicon_size", s.lexicon_size}, {"one_planted", s.one_planted},
          {"plant_prob", s.plant_prob}, {"phi", s.phi},
          {"alpha", s.alpha},           {"sigma", s.sigma},
          {"seed", s.seed},             {"start_date", s.start_date}};
}

struct SynthData {
  Corpus corpus;
  Series series;
  std::vector<int> signal;  // z_t per day
};

/// Background-token documents with planted lexicon words driving an AR(1)
/// series: x_t = phi x_{t-1} + alpha z_t + sigma eps_t, x_0 = 0.
inline SynthData synth_generate(const SynthSpec& spec) {
  spec.validate();
  auto doc_rng = make_stream(spec.seed, "synth", 0);
  auto noise_rng = make_stream(spec.seed, "synth", 1);
  std::uniform_int_distribution<std::size_t> n_docs(spec.docs_min, spec.docs_max);
  std::uniform_int_distribution<std::size_t> doc_len(spec.len_min, spec.len_max);
  std::uniform_int_distribution<std::size_t> background(0, spec.background_vocab - 1);
  std::uniform_int_distribution<std::size_t> lexicon(0, spec.lexicon_size - 1);
  std::bernoulli_distribution coin(0.5);
  std::bernoulli_distribution plant(spec.plant_prob);
  std::normal_distribution<double> eps(0.0, 1.0);

  SynthData out;
  out.series.features = 1;
  double x = 0.0;
  std::string date = format_date(parse_date(spec.start_date));
  for (std::size_t t = 0; t < spec.n_days; ++t) {
    CorpusDay day;
    day.date = date;
    const std::size_t n = n_docs(doc_rng);
    std::vector<bool> planted(n, false);
    if (spec.one_planted) {
      planted[std::uniform_int_distribution<std::size_t>(0, n - 1)(doc_rng)] = true;
    } else {
      for (std::size_t j = 0; j < n; ++j) planted[j] = plant(doc_rng);
    }
    int z = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t len = doc_len(doc_rng);
      std::vector<std::string> words(len);
      for (auto& w : words) w = spec.background_token(background(doc_rng));
      if (planted[j]) {
        const bool positive = coin(doc_rng);
        const std::size_t pos = std::uniform_int_distribution<std::size_t>(0, len - 1)(doc_rng);
        const std::size_t word = lexicon(doc_rng);
        words[pos] = positive ? spec.positive_token(word) : spec.negative_token(word);
        z += positive ? 1 : -1;
      }
      std::string text;
      for (std::size_t k = 0; k < words.size(); ++k) text += (k ? " " : "") + words[k];
      day.headlines.push_back({std::move(text), planted[j]});
    }
    const double e = eps(noise_rng);
    x = spec.phi * x + spec.alpha * z + spec.sigma * e + 0.0;  // no negative zero
    out.corpus.push_back(std::move(day));
    out.series.dates.push_back(date);
    out.series.values.push_back(x);
    out.signal.push_back(z);
    date = add_days(date, 1);
  }
  return out;
}

}  // namespace msin
