#include <gtest/gtest.h>

#include "qann/data.hpp"
#include "qann/encoder.hpp"
#include "qann/errors.hpp"
#include "test_support.hpp"

using namespace qann;

namespace {

struct Sample {
  Vocab vocab;
  Example example;
};

// The two-document country example concatenated into one support text.
Sample country_example() {
  Sample s;
  Vocab& v = s.vocab;
  s.example.document = make_document(
      {"schweinsteiger", "scored", "against", "ukraine", ".", "germany", "played", "against", "ukraine"}, v);
  s.example.query = make_document(
      {"schweinsteiger", "plays", "for", "the", "national", "team", "of", "@blank"}, v);
  s.example.candidates = {*v.find("ukraine"), *v.find("germany")};
  s.example.gold = *v.find("germany");
  return s;
}

}  // namespace

TEST(Sois, OneSpanPerCandidateOccurrenceInDocumentOrder) {
  const Sample s = country_example();
  const auto spans = extract_sois(s.example.document, s.example.candidates);
  ASSERT_EQ(spans.size(), 3u);
  EXPECT_EQ(spans[0], (Span{4, 4}));
  EXPECT_EQ(spans[1], (Span{6, 6}));
  EXPECT_EQ(spans[2], (Span{9, 9}));
}

TEST(Sois, MultiplicityAndAbsentCandidates) {
  Vocab v;
  const Document doc = make_document({"a", "b", "a", "a", "c"}, v);
  const std::vector<SymbolId> cands = {*v.find("a"), v.add("zzz")};
  const auto spans = extract_sois(doc, cands);
  EXPECT_EQ(spans, (std::vector<Span>{{1, 1}, {3, 3}, {4, 4}}));
  EXPECT_TRUE(extract_sois(doc, std::vector<SymbolId>{v.add("nope")}).empty());
}

TEST(Support, PairsCarryAnswersAndContextQueries) {
  const Sample s = country_example();
  Rng rng(9);
  ModelParams p = fixtures::random_params({s.vocab.size(), 4, false}, rng);
  ad::Tape tape;
  BoundParams b = bind(tape, p);
  const EncoderStates states =
      bigru_encode(ad::gather_rows(b.E_i, s.example.document.symbols), b.gru_fwd, b.gru_bwd);
  const auto spans = extract_sois(s.example.document, s.example.candidates);
  const SupportSet support = build_support(s.example.document, spans, states, b.W_q, b.E_i,
                                           OutputEmbedding::learned(b.E_o), s.example.candidates);
  ASSERT_EQ(support.size(), 3u);
  const SymbolId ukraine = *s.vocab.find("ukraine"), germany = *s.vocab.find("germany");
  EXPECT_EQ(support.pairs[0].answer, ukraine);
  EXPECT_EQ(support.pairs[1].answer, germany);
  EXPECT_EQ(support.pairs[2].answer, ukraine);
  EXPECT_EQ(support.keys.value().shape(), (Shape{3, 4}));
  for (std::size_t k = 0; k < 3; ++k) {
    const Tensor expected = encode_span_query(states, spans[k], b.W_q).value();
    EXPECT_EQ(support.pairs[k].z.value(), expected);
    const auto row = p.E_i.row(support.pairs[k].answer);
    EXPECT_EQ(support.pairs[k].y_in.value().values(), std::vector<double>(row.begin(), row.end()));
    const auto out_row = p.E_o.row(support.pairs[k].answer);
    EXPECT_EQ(support.pairs[k].y_out.value().values(), std::vector<double>(out_row.begin(), out_row.end()));
  }
}

TEST(Support, EmptySpanListGivesEmptySet) {
  const Sample s = country_example();
  Rng rng(1);
  ModelParams p = fixtures::random_params({s.vocab.size(), 3, false}, rng);
  ad::Tape tape;
  BoundParams b = bind(tape, p);
  const EncoderStates states =
      bigru_encode(ad::gather_rows(b.E_i, s.example.document.symbols), b.gru_fwd, b.gru_bwd);
  const SupportSet support = build_support(s.example.document, {}, states, b.W_q, b.E_i,
                                           OutputEmbedding::learned(b.E_o), s.example.candidates);
  EXPECT_EQ(support.size(), 0u);
}

TEST(Support, SpanOutsideDocumentThrows) {
  const Sample s = country_example();
  Rng rng(1);
  ModelParams p = fixtures::random_params({s.vocab.size(), 3, false}, rng);
  ad::Tape tape;
  BoundParams b = bind(tape, p);
  const EncoderStates states =
      bigru_encode(ad::gather_rows(b.E_i, s.example.document.symbols), b.gru_fwd, b.gru_bwd);
  const std::vector<Span> bad = {{10, 10}};
  EXPECT_THROW(build_support(s.example.document, bad, states, b.W_q, b.E_i,
                             OutputEmbedding::learned(b.E_o), s.example.candidates),
               IndexError);
}

TEST(Example, GoldIndexRequiresGoldAmongCandidates) {
  Example ex;
  ex.candidates = {5, 7, 9};
  ex.gold = 9;
  EXPECT_EQ(ex.gold_index(), 2u);
  ex.gold = 6;
  EXPECT_THROW(ex.gold_index(), DataError);
}
