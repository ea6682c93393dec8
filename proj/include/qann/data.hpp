#pragma once

// Datasets: vocabulary, synthetic multi-hop cloze tasks, the canonical
// line-delimited JSON format and the Children's Book Test text layout.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "qann/support.hpp"

namespace qann {

inline constexpr std::string_view kSeparatorToken = "@sep";
inline constexpr std::string_view kPlaceholderToken = "@blank";
inline constexpr std::string_view kUnknownToken = "@unk";

/// Symbol <-> string table. Ids 0..2 are the reserved separator,
/// placeholder and unknown tokens. A frozen vocabulary maps unseen tokens to
/// the unknown id instead of growing.
class Vocab {
 public:
  Vocab();
  static Vocab from_tokens(const std::vector<std::string>& tokens);

  SymbolId add(std::string_view token);
  std::optional<SymbolId> find(std::string_view token) const;
  const std::string& token(SymbolId id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, SymbolId> ids_;
  bool frozen_ = false;
};

struct Dataset {
  std::string split;
  std::shared_ptr<Vocab> vocab;
  std::vector<Example> examples;
  std::vector<std::string> warnings;

  std::size_t size() const { return examples.size(); }
};

struct SynthConfig {
  std::size_t n_entities = 20;
  std::size_t n_relations = 4;
  std::size_t chain_length = 1;  // L in {1, 2, 3}
  std::size_t n_distractor_facts = 3;
  std::size_t n_examples = 100;
  std::uint64_t seed = 1;

  /// Throws ConfigError naming the violated constraint.
  void validate() const;
};

/// Registers every token the generator can emit for cfg, in a fixed order,
/// so that independently generated splits agree on ids.
void register_synthetic_vocab(const SynthConfig& cfg, Vocab& vocab);

/// Each example hides a relation chain among distractor facts; the query is
/// "e_0 <composite relation> @blank" and the gold answer is e_L. The first
/// link is the fact (e_0 r_1 e_1); every later link i is rendered through a
/// bridge entity, (e_i r_i e_{i-1}), so for L = 2 the document holds
/// (e_0 r_1 e_1) and (e_2 r_2 e_1). Facts render as "subject relation
/// object ." and are shuffled. Candidates are the document's entities in
/// id order.
Dataset gen_synthetic(const SynthConfig& cfg, std::shared_ptr<Vocab> vocab = nullptr,
                      std::string split = "train");

void save_canonical(const Dataset& dataset, std::ostream& out);
void save_canonical(const Dataset& dataset, const std::filesystem::path& path);

/// Parses the canonical format, one JSON object per line:
///   {"document":[...],"query":[...],"candidates":[...],"answer":"..."}
/// Unknown tokens are added to vocab (or mapped to @unk if it is frozen).
Dataset load_canonical(std::istream& in, std::shared_ptr<Vocab> vocab,
                       std::string split = "data");
Dataset load_canonical(const std::filesystem::path& path, std::shared_ptr<Vocab> vocab);

/// Children's Book Test layout: 20 numbered context lines, then
/// "21 <query with XXXXX>\t<answer>\t\t<c1|c2|...>", passages separated by
/// blank lines.
Dataset load_cbt(std::istream& in, std::shared_ptr<Vocab> vocab, std::string split = "cbt");
Dataset load_cbt(const std::filesystem::path& path, std::shared_ptr<Vocab> vocab);

/// Builds a Document from raw tokens, recording the placeholder position.
Document make_document(const std::vector<std::string>& tokens, Vocab& vocab);

}  // namespace qann
