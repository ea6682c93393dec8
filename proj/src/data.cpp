#include "qann/data.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "qann/errors.hpp"

namespace qann {

// ---- Vocab --------------------------------------------------------------

Vocab::Vocab() {
  for (std::string_view reserved : {kSeparatorToken, kPlaceholderToken, kUnknownToken}) {
    add(reserved);
  }
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  Vocab vocab;
  if (tokens.size() < 3 || tokens[kSeparatorId] != kSeparatorToken ||
      tokens[kPlaceholderId] != kPlaceholderToken || tokens[kUnknownId] != kUnknownToken) {
    throw DataError("vocabulary does not start with the reserved tokens");
  }
  for (std::size_t i = 3; i < tokens.size(); ++i) {
    if (vocab.add(tokens[i]) != i) throw DataError("duplicate vocabulary token '" + tokens[i] + "'");
  }
  return vocab;
}

SymbolId Vocab::add(std::string_view token) {
  if (auto id = find(token)) return *id;
  if (frozen_) return kUnknownId;
  const SymbolId id = tokens_.size();
  tokens_.emplace_back(token);
  ids_.emplace(tokens_.back(), id);
  return id;
}

std::optional<SymbolId> Vocab::find(std::string_view token) const {
  const auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocab::token(SymbolId id) const {
  if (id >= tokens_.size()) {
    throw IndexError("symbol id " + std::to_string(id) + " outside vocabulary of size " +
                     std::to_string(tokens_.size()));
  }
  return tokens_[id];
}

Document make_document(const std::vector<std::string>& tokens, Vocab& vocab) {
  Document doc;
  doc.raw_tokens = tokens;
  doc.symbols.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const SymbolId id = vocab.add(tokens[i]);
    if (id == kPlaceholderId) {
      if (doc.placeholder_pos) throw DataError("more than one placeholder token");
      doc.placeholder_pos = i;
    }
    doc.symbols.push_back(id);
  }
  return doc;
}

// ---- synthetic tasks ----------------------------------------------------

namespace {

std::string entity_token(std::size_t i) { return "ent" + std::to_string(i); }
std::string relation_token(std::size_t i) { return "rel" + std::to_string(i); }

std::string composite_token(const std::vector<std::size_t>& relations) {
  std::string out;
  for (std::size_t i = 0; i < relations.size(); ++i) {
    if (i > 0) out += "+";
    out += relation_token(relations[i]);
  }
  return out;
}

// All relation sequences of the given length, lexicographic.
std::vector<std::vector<std::size_t>> relation_sequences(std::size_t n_relations,
                                                         std::size_t length) {
  std::vector<std::vector<std::size_t>> out{{}};
  for (std::size_t step = 0; step < length; ++step) {
    std::vector<std::vector<std::size_t>> next;
    for (const auto& prefix : out) {
      for (std::size_t r = 0; r < n_relations; ++r) {
        auto seq = prefix;
        seq.push_back(r);
        next.push_back(std::move(seq));
      }
    }
    out = std::move(next);
  }
  return out;
}

struct Fact {
  std::size_t subject;
  std::size_t relation;
  std::size_t object;
  bool operator==(const Fact&) const = default;
};

// Follows the query relations from start: the first link runs subject to
// object, every later link object to subject (the bridge entity is the
// object of both facts). nullopt unless each step has exactly one match.
std::optional<std::size_t> follow_unique(const std::vector<Fact>& facts, std::size_t start,
                                         const std::vector<std::size_t>& relations) {
  std::size_t current = start;
  for (std::size_t step = 0; step < relations.size(); ++step) {
    const bool inverse = step > 0;
    std::optional<std::size_t> next;
    for (const Fact& f : facts) {
      if ((inverse ? f.object : f.subject) == current && f.relation == relations[step]) {
        if (next) return std::nullopt;
        next = inverse ? f.subject : f.object;
      }
    }
    if (!next) return std::nullopt;
    current = *next;
  }
  return current;
}

}  // namespace

void SynthConfig::validate() const {
  if (chain_length < 1 || chain_length > 3) {
    throw ConfigError("chain_length must be 1, 2 or 3 (got " + std::to_string(chain_length) + ")");
  }
  if (n_entities < 2 * chain_length + 2) {
    throw ConfigError("n_entities must be at least 2*chain_length+2 = " +
                      std::to_string(2 * chain_length + 2) + " (got " +
                      std::to_string(n_entities) + ")");
  }
  if (n_relations < 1) throw ConfigError("n_relations must be at least 1");
  if (n_examples < 1) throw ConfigError("n_examples must be at least 1");
}

void register_synthetic_vocab(const SynthConfig& cfg, Vocab& vocab) {
  vocab.add(".");
  for (std::size_t i = 0; i < cfg.n_entities; ++i) vocab.add(entity_token(i));
  for (std::size_t r = 0; r < cfg.n_relations; ++r) vocab.add(relation_token(r));
  if (cfg.chain_length > 1) {
    for (const auto& seq : relation_sequences(cfg.n_relations, cfg.chain_length)) {
      vocab.add(composite_token(seq));
    }
  }
}

Dataset gen_synthetic(const SynthConfig& cfg, std::shared_ptr<Vocab> vocab, std::string split) {
  cfg.validate();
  if (!vocab) vocab = std::make_shared<Vocab>();
  register_synthetic_vocab(cfg, *vocab);

  Dataset dataset;
  dataset.split = std::move(split);
  dataset.vocab = vocab;
  dataset.examples.reserve(cfg.n_examples);

  Rng rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick_entity(0, cfg.n_entities - 1);
  std::uniform_int_distribution<std::size_t> pick_relation(0, cfg.n_relations - 1);
  const std::size_t L = cfg.chain_length;

  while (dataset.examples.size() < cfg.n_examples) {
    std::vector<std::size_t> chain_entities;
    while (chain_entities.size() < L + 1) {
      const std::size_t e = pick_entity(rng);
      if (std::find(chain_entities.begin(), chain_entities.end(), e) == chain_entities.end()) {
        chain_entities.push_back(e);
      }
    }
    std::vector<std::size_t> relations(L);
    for (auto& r : relations) r = pick_relation(rng);

    std::vector<Fact> facts;
    facts.push_back({chain_entities[0], relations[0], chain_entities[1]});
    for (std::size_t i = 1; i < L; ++i) {
      facts.push_back({chain_entities[i + 1], relations[i], chain_entities[i]});
    }
    // A repeated relation makes the backward step ambiguous on its own.
    if (follow_unique(facts, chain_entities[0], relations) != chain_entities[L]) continue;

    // The first L distractors reuse the chain relations with other subjects,
    // so matching a relation alone never identifies the next fact.
    bool feasible = true;
    for (std::size_t d = 0; d < cfg.n_distractor_facts && feasible; ++d) {
      feasible = false;
      for (int attempt = 0; attempt < 1000; ++attempt) {
        const std::size_t relation = d < L ? relations[d] : pick_relation(rng);
        const std::size_t subject = pick_entity(rng);
        const std::size_t object = pick_entity(rng);
        if (subject == object) continue;
        const Fact candidate{subject, relation, object};
        if (std::find(facts.begin(), facts.end(), candidate) != facts.end()) continue;
        facts.push_back(candidate);
        if (follow_unique(facts, chain_entities[0], relations) == chain_entities[L]) {
          feasible = true;
          break;
        }
        facts.pop_back();
      }
    }
    if (!feasible) continue;
    std::shuffle(facts.begin(), facts.end(), rng);

    std::vector<std::string> doc_tokens;
    std::set<std::size_t> entities;
    for (const Fact& f : facts) {
      doc_tokens.push_back(entity_token(f.subject));
      doc_tokens.push_back(relation_token(f.relation));
      doc_tokens.push_back(entity_token(f.object));
      doc_tokens.emplace_back(".");
      entities.insert(f.subject);
      entities.insert(f.object);
    }
    const std::string query_relation =
        L == 1 ? relation_token(relations[0]) : composite_token(relations);
    const std::vector<std::string> query_tokens = {entity_token(chain_entities[0]),
                                                   query_relation,
                                                   std::string(kPlaceholderToken)};

    Example ex;
    ex.document = make_document(doc_tokens, *vocab);
    ex.query = make_document(query_tokens, *vocab);
    for (std::size_t e : entities) ex.candidates.push_back(*vocab->find(entity_token(e)));
    std::sort(ex.candidates.begin(), ex.candidates.end());
    ex.gold = *vocab->find(entity_token(chain_entities[L]));
    dataset.examples.push_back(std::move(ex));
  }
  return dataset;
}

// ---- canonical format ---------------------------------------------------

void save_canonical(const Dataset& dataset, std::ostream& out) {
  for (const Example& ex : dataset.examples) {
    nlohmann::ordered_json record;
    record["document"] = ex.document.raw_tokens;
    record["query"] = ex.query.raw_tokens;
    std::vector<std::string> candidates;
    for (SymbolId c : ex.candidates) candidates.push_back(dataset.vocab->token(c));
    record["candidates"] = candidates;
    record["answer"] = dataset.vocab->token(ex.gold);
    out << record.dump() << '\n';
  }
}

void save_canonical(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  save_canonical(dataset, out);
}

namespace {

std::vector<std::string> string_list(const nlohmann::json& record, const char* field,
                                     const std::string& where) {
  if (!record.contains(field)) throw ParseError(where, std::string("missing field '") + field + "'");
  const auto& value = record.at(field);
  if (!value.is_array()) throw ParseError(where, std::string("field '") + field + "' must be a list");
  std::vector<std::string> out;
  for (const auto& item : value) {
    if (!item.is_string()) {
      throw ParseError(where, std::string("field '") + field + "' must hold strings");
    }
    out.push_back(item.get<std::string>());
  }
  return out;
}

}  // namespace

Dataset load_canonical(std::istream& in, std::shared_ptr<Vocab> vocab, std::string split) {
  if (!vocab) vocab = std::make_shared<Vocab>();
  Dataset dataset;
  dataset.split = std::move(split);
  dataset.vocab = vocab;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(where, e.what());
    }
    if (!record.is_object()) throw ParseError(where, "record must be a JSON object");

    const auto document = string_list(record, "document", where);
    const auto query = string_list(record, "query", where);
    const auto candidates = string_list(record, "candidates", where);
    if (!record.contains("answer") || !record.at("answer").is_string()) {
      throw ParseError(where, "missing string field 'answer'");
    }
    const std::string answer = record.at("answer").get<std::string>();

    if (std::count(query.begin(), query.end(), kPlaceholderToken) != 1) {
      throw ParseError(where, "query must contain exactly one '@blank'");
    }
    for (const auto& tokens : {document, query}) {
      if (std::find(tokens.begin(), tokens.end(), kSeparatorToken) != tokens.end()) {
        throw ParseError(where, "'@sep' is reserved");
      }
    }
    if (std::find(document.begin(), document.end(), kPlaceholderToken) != document.end()) {
      throw ParseError(where, "'@blank' may only appear in the query");
    }
    if (candidates.empty()) throw DataError(where + ": empty candidate list");
    if (std::find(candidates.begin(), candidates.end(), answer) == candidates.end()) {
      throw DataError(where + ": answer '" + answer + "' is not among the candidates");
    }

    Example ex;
    ex.document = make_document(document, *vocab);
    ex.query = make_document(query, *vocab);
    for (const auto& c : candidates) ex.candidates.push_back(vocab->add(c));
    ex.gold = vocab->add(answer);
    dataset.examples.push_back(std::move(ex));
  }
  return dataset;
}

Dataset load_canonical(const std::filesystem::path& path, std::shared_ptr<Vocab> vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return load_canonical(in, std::move(vocab), path.stem().string());
}

// ---- Children's Book Test ----------------------------------------------

namespace {

std::vector<std::string> split_ws(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

std::vector<std::string> split_on(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string part;
  std::istringstream in(text);
  while (std::getline(in, part, sep)) out.push_back(part);
  if (!text.empty() && text.back() == sep) out.emplace_back();
  return out;
}

constexpr std::string_view kCbtBlank = "XXXXX";

Example parse_cbt_passage(const std::vector<std::string>& lines, std::size_t index, Vocab& vocab) {
  const std::string where = "passage " + std::to_string(index);
  if (lines.size() != 21) {
    throw ParseError(where, "expected 21 numbered lines, found " + std::to_string(lines.size()));
  }
  std::vector<std::string> document;
  std::string final_line;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    const auto space = line.find(' ');
    const std::string number = line.substr(0, space);
    if (number != std::to_string(i + 1)) {
      throw ParseError(where, "line " + std::to_string(i + 1) + " is numbered '" + number + "'");
    }
    const std::string text = space == std::string::npos ? "" : line.substr(space + 1);
    if (i < 20) {
      for (auto& tok : split_ws(text)) document.push_back(std::move(tok));
    } else {
      final_line = text;
    }
  }

  const auto fields = split_on(final_line, '\t');
  if (fields.size() < 4 || fields[1].empty() || fields[3].empty()) {
    throw DataError(where + ": cloze line needs query, answer and candidate fields");
  }
  std::vector<std::string> query = split_ws(fields[0]);
  const auto blanks = std::count(query.begin(), query.end(), kCbtBlank);
  if (blanks != 1) throw ParseError(where, "cloze line must contain exactly one XXXXX");
  std::replace(query.begin(), query.end(), std::string(kCbtBlank), std::string(kPlaceholderToken));

  std::vector<std::string> candidates;
  for (auto& c : split_on(fields[3], '|')) {
    if (!c.empty()) candidates.push_back(std::move(c));
  }
  const std::string& answer = fields[1];
  if (std::find(candidates.begin(), candidates.end(), answer) == candidates.end()) {
    throw DataError(where + ": answer '" + answer + "' is not among the candidates");
  }

  Example ex;
  ex.document = make_document(document, vocab);
  ex.query = make_document(query, vocab);
  for (const auto& c : candidates) ex.candidates.push_back(vocab.add(c));
  ex.gold = vocab.add(answer);
  return ex;
}

}  // namespace

Dataset load_cbt(std::istream& in, std::shared_ptr<Vocab> vocab, std::string split) {
  if (!vocab) vocab = std::make_shared<Vocab>();
  Dataset dataset;
  dataset.split = std::move(split);
  dataset.vocab = vocab;

  std::vector<std::string> passage;
  std::size_t index = 0;
  auto flush = [&] {
    if (passage.empty()) return;
    dataset.examples.push_back(parse_cbt_passage(passage, index++, *vocab));
    passage.clear();
  };
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) {
      flush();
    } else {
      passage.push_back(line);
    }
  }
  flush();
  if (dataset.examples.empty()) dataset.warnings.push_back("no passages found");
  return dataset;
}

Dataset load_cbt(const std::filesystem::path& path, std::shared_ptr<Vocab> vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return load_cbt(in, std::move(vocab), path.stem().string());
}

}  // namespace qann
