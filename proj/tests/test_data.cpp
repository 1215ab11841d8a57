#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "aefs/data.hpp"
#include "aefs/metrics.hpp"

using namespace aefs;

namespace {

RawRecord rec(int label, std::vector<std::string> tokens) { return RawRecord{label, std::move(tokens)}; }

std::vector<RawRecord> repeat(const RawRecord& r, int n) { return std::vector<RawRecord>(n, r); }

}  // namespace

TEST(Discretize, RuleAndBoundaries) {
  EXPECT_EQ(discretize_numeric(1.0), 1);
  EXPECT_EQ(discretize_numeric(2.0), 1);
  EXPECT_EQ(discretize_numeric(-5.0), 1);
  EXPECT_EQ(discretize_numeric(100.0), 21);  // (ln 100)^2 = 21.2076...
  EXPECT_EQ(discretize_numeric(3.0), 1);     // (ln 3)^2 = 1.2069...
  EXPECT_EQ(discretize_numeric(std::exp(3.0) + 1e-9), 9);
}

TEST(Discretize, MonotoneAboveTwo) {
  std::int64_t prev = discretize_numeric(2.0000001);
  for (double x = 2.0000001; x < 1e7; x *= 1.07) {
    const auto v = discretize_numeric(x);
    EXPECT_GE(v, prev);
    prev = v;
  }
}

TEST(Discretize, MissingAndBadTokens) {
  EXPECT_EQ(numeric_token(""), std::string(kMissingToken));
  EXPECT_EQ(numeric_token("  "), std::string(kMissingToken));
  EXPECT_EQ(numeric_token("100"), "21");
  EXPECT_EQ(numeric_token("0"), "1");
  EXPECT_THROW(numeric_token("68fd1e64"), ParseError);
}

TEST(Vocabulary, FrequencyThresholdIsInclusive) {
  const Schema schema = Schema::all_categorical(1);
  std::vector<RawRecord> records = repeat(rec(0, {"nine"}), 9);
  const auto ten = repeat(rec(1, {"ten"}), 10);
  records.insert(records.end(), ten.begin(), ten.end());
  const Vocabulary v = build_vocab(records, schema, 10);
  EXPECT_EQ(v.lookup(0, "nine"), Vocabulary::kOovId);
  EXPECT_NE(v.lookup(0, "ten"), Vocabulary::kOovId);
  EXPECT_EQ(v.vocab_size(0), 2u);
}

TEST(Vocabulary, MinFreqOneKeepsEverySeenToken) {
  const Schema schema = Schema::all_categorical(2);
  const std::vector<RawRecord> records{rec(0, {"a", "x"}), rec(1, {"b", "x"}), rec(0, {"c", "y"})};
  const Vocabulary v = build_vocab(records, schema, 1);
  EXPECT_EQ(v.vocab_size(0), 4u);
  EXPECT_EQ(v.vocab_size(1), 3u);
  EXPECT_EQ(v.lookup(0, "never-seen"), Vocabulary::kOovId);
}

TEST(Vocabulary, IdsFollowFirstOccurrence) {
  const Schema schema = Schema::all_categorical(1);
  const std::vector<RawRecord> records{rec(0, {"z"}), rec(0, {"a"}), rec(0, {"z"}), rec(0, {"m"})};
  const Vocabulary v = build_vocab(records, schema, 1);
  EXPECT_EQ(v.lookup(0, "z"), 1u);
  EXPECT_EQ(v.lookup(0, "a"), 2u);
  EXPECT_EQ(v.lookup(0, "m"), 3u);
}

TEST(Vocabulary, ShardedCountsMergeToSequentialResult) {
  const Schema schema = Schema::all_categorical(2);
  std::vector<RawRecord> records;
  for (int i = 0; i < 40; ++i) records.push_back(rec(i % 2, {std::to_string(i % 7), std::to_string((i * 5) % 11)}));
  const Vocabulary whole = build_vocab(records, schema, 3);
  VocabCounter left(schema);
  VocabCounter right(schema);
  for (std::size_t i = 0; i < records.size(); ++i) (i < 17 ? left : right).add(records[i], i);
  right.merge(left);
  const Vocabulary merged = right.finalize(3);
  for (std::size_t f = 0; f < 2; ++f) EXPECT_EQ(merged.tokens(f), whole.tokens(f));
}

TEST(Vocabulary, EmptyInputThrows) {
  const Schema schema = Schema::all_categorical(1);
  EXPECT_THROW(build_vocab(std::span<const RawRecord>{}, schema, 1), DataError);
}

TEST(Quantize, HandCorpus) {
  // Field 0 categorical, field 1 numerical.
  const Schema schema({{"site", FieldKind::categorical, 0}, {"count", FieldKind::numerical, 1}});
  const std::vector<RawRecord> corpus{rec(1, {"s1", "100"}), rec(0, {"s2", ""}), rec(1, {"s1", "150"})};
  const Vocabulary v = build_vocab(corpus, schema, 2);
  // site: s1 seen twice -> id 1; s2 once -> OOV.
  // count: 100 -> "21", 150 -> "25" (ln 150 squared = 25.1), "" -> missing; each seen once -> OOV.
  EXPECT_EQ(v.vocab_size(0), 2u);
  EXPECT_EQ(v.vocab_size(1), 1u);
  EXPECT_EQ(quantize(corpus[0], schema, v).x, (std::vector<std::uint32_t>{1, 0}));
  EXPECT_EQ(quantize(corpus[1], schema, v).x, (std::vector<std::uint32_t>{0, 0}));

  const Vocabulary v1 = build_vocab(corpus, schema, 1);
  EXPECT_EQ(quantize(corpus[0], schema, v1).x, (std::vector<std::uint32_t>{1, 1}));
  EXPECT_EQ(quantize(corpus[1], schema, v1).x, (std::vector<std::uint32_t>{2, 2}));
  EXPECT_EQ(quantize(corpus[2], schema, v1).x, (std::vector<std::uint32_t>{1, 3}));
  EXPECT_EQ(v1.tokens(1)[2], std::string(kMissingToken));
}

TEST(Quantize, UnseenTokensMapToOov) {
  const Schema schema = Schema::all_categorical(3);
  const Vocabulary v = build_vocab(std::vector<RawRecord>{rec(0, {"a", "b", "c"})}, schema, 1);
  EXPECT_EQ(quantize(rec(1, {"x", "y", "z"}), schema, v).x, (std::vector<std::uint32_t>(3, 0)));
}

TEST(Quantize, ArityMismatchThrows) {
  const Schema schema = Schema::all_categorical(2);
  const Vocabulary v = build_vocab(std::vector<RawRecord>{rec(0, {"a", "b"})}, schema, 1);
  EXPECT_THROW(quantize(rec(0, {"a"}), schema, v), DataError);
}

TEST(Split, SizesAndPartition) {
  std::vector<int> ten(10);
  std::iota(ten.begin(), ten.end(), 0);
  const auto s10 = split_dataset(ten, 1);
  EXPECT_EQ(s10.train.size(), 8u);
  EXPECT_EQ(s10.val.size(), 1u);
  EXPECT_EQ(s10.test.size(), 1u);

  std::vector<int> items(45000);
  std::iota(items.begin(), items.end(), 0);
  const auto s = split_dataset(items, 7);
  EXPECT_EQ(s.train.size(), 36000u);
  EXPECT_EQ(s.val.size(), 4500u);
  EXPECT_EQ(s.test.size(), 4500u);
  std::set<int> all(s.train.begin(), s.train.end());
  all.insert(s.val.begin(), s.val.end());
  all.insert(s.test.begin(), s.test.end());
  EXPECT_EQ(all.size(), items.size());

  const auto again = split_dataset(items, 7);
  EXPECT_EQ(s.train, again.train);
  EXPECT_EQ(s.val, again.val);
  EXPECT_NE(s.train, split_dataset(items, 8).train);
}

TEST(Split, TooFewInstancesThrows) {
  EXPECT_THROW(split_dataset(std::vector<int>(9), 1), DataError);
}

TEST(Csv, RoundTrip) {
  const Schema schema({{"a", FieldKind::categorical, 0}, {"n", FieldKind::numerical, 1}});
  const std::vector<RawRecord> records{rec(1, {"x", "3.5"}), rec(0, {"", ""})};
  std::stringstream ss;
  write_csv(ss, schema, records);
  EXPECT_EQ(ss.str(), "label,a,n\n1,x,3.5\n0,,\n");
  EXPECT_EQ(read_csv(ss, schema), records);
}

TEST(Csv, HeaderMismatchAndBadRowsThrow) {
  const Schema schema = Schema::all_categorical(2);
  std::istringstream bad_header("label,f0,g\n1,a,b\n");
  EXPECT_THROW(read_csv(bad_header, schema), DataError);
  std::istringstream short_row("label,f0,f1\n1,a\n");
  EXPECT_THROW(read_csv(short_row, schema), DataError);
  std::istringstream bad_label("label,f0,f1\n2,a,b\n");
  EXPECT_THROW(read_csv(bad_label, schema), DataError);
}

TEST(SchemaFile, ParseAndWrite) {
  std::istringstream in("# fields\nsite, categorical\nclicks,numerical  # raw count\n\n");
  const Schema s = Schema::parse(in);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].name, "site");
  EXPECT_EQ(s[1].kind, FieldKind::numerical);
  std::ostringstream out;
  s.write(out);
  EXPECT_EQ(out.str(), "site,categorical\nclicks,numerical\n");
  std::istringstream bad("x,ordinal\n");
  EXPECT_THROW(Schema::parse(bad), ParseError);
}

TEST(Criteo, ParsesFortyColumnsWithMissingValues) {
  std::string line = "1";
  for (int i = 0; i < 13; ++i) line += "\t" + std::string(i == 2 ? "" : std::to_string(i * 10));
  for (int i = 0; i < 26; ++i) line += "\t" + std::string(i == 5 ? "" : "68fd1e64");
  std::istringstream in(line + "\r\n");
  const auto records = read_criteo(in);
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(records[0].label, 1);
  ASSERT_EQ(records[0].tokens.size(), 39u);
  const Schema schema = criteo_schema();
  EXPECT_EQ(field_token(schema[2], records[0].tokens[2]), std::string(kMissingToken));
  EXPECT_EQ(field_token(schema[18], records[0].tokens[18]), std::string(kMissingToken));
  EXPECT_EQ(field_token(schema[10], records[0].tokens[10]), "21");  // 100
  std::istringstream short_line("1\ta\tb\n");
  EXPECT_THROW(read_criteo(short_line), DataError);
}

TEST(Synthetic, DeterministicPerSeed) {
  SyntheticSpec spec;
  spec.n_records = 2000;
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  EXPECT_EQ(a.records, b.records);
  EXPECT_EQ(a.teacher.informative, b.teacher.informative);
  spec.teacher_seed += 1;
  EXPECT_NE(generate_synthetic(spec).records, a.records);
}

TEST(Synthetic, DefaultSpecShape) {
  SyntheticSpec spec;
  EXPECT_EQ(spec.n_fields, 16u);
  EXPECT_EQ(spec.n_informative, 8u);
  EXPECT_EQ(spec.n_records, 200000u);
  EXPECT_EQ(spec.vocab_size(3), 50u);
  spec.n_records = 500;
  const auto d = generate_synthetic(spec);
  EXPECT_EQ(d.records.size(), 500u);
  EXPECT_EQ(d.teacher.informative.size(), 8u);
  EXPECT_TRUE(std::is_sorted(d.teacher.informative.begin(), d.teacher.informative.end()));
  for (const auto& r : d.records) {
    ASSERT_EQ(r.tokens.size(), 16u);
    for (const auto& t : r.tokens) {
      const int c = std::stoi(t);
      EXPECT_GE(c, 0);
      EXPECT_LT(c, 50);
    }
  }
}

TEST(Synthetic, TeacherAucOnDefaultSpec) {
  const auto d = generate_synthetic(SyntheticSpec{});
  std::vector<int> y;
  for (const auto& r : d.records) y.push_back(r.label);
  EXPECT_GT(auc(d.teacher_scores, y), 0.75);
}

TEST(Synthetic, NoInformativeFieldsMeansNoSignal) {
  SyntheticSpec spec;
  spec.n_informative = 0;
  spec.n_records = 20000;
  const auto d = generate_synthetic(spec);
  std::vector<int> y;
  std::vector<double> score;
  // Any fixed function of the features is uninformative; use field 0's category.
  for (const auto& r : d.records) {
    y.push_back(r.label);
    score.push_back(std::stod(r.tokens[0]));
  }
  EXPECT_NEAR(auc(score, y), 0.5, 0.02);
}

TEST(Synthetic, NoiseFieldsAreIndependentOfLabel) {
  const auto d = generate_synthetic(SyntheticSpec{});
  std::vector<bool> informative(16, false);
  for (const auto f : d.teacher.informative) informative[f] = true;
  double base = 0.0;
  for (const auto& r : d.records) base += r.label;
  base /= static_cast<double>(d.records.size());
  for (std::size_t f = 0; f < 16; ++f) {
    std::vector<double> pos(50, 0.0);
    std::vector<double> total(50, 0.0);
    for (const auto& r : d.records) {
      const int c = std::stoi(r.tokens[f]);
      pos[c] += r.label;
      total[c] += 1.0;
    }
    // Pearson chi-square of label counts against the pooled rate, 49 df.
    double chi2 = 0.0;
    for (int c = 0; c < 50; ++c) {
      const double e1 = total[c] * base;
      const double e0 = total[c] * (1.0 - base);
      chi2 += (pos[c] - e1) * (pos[c] - e1) / e1 + ((total[c] - pos[c]) - e0) * ((total[c] - pos[c]) - e0) / e0;
    }
    if (informative[f]) {
      EXPECT_GT(chi2, 200.0) << "field " << f;
    } else {
      EXPECT_LT(chi2, 85.35) << "field " << f;  // 0.999 quantile
    }
  }
}

TEST(Synthetic, InvalidSpecThrows) {
  SyntheticSpec spec;
  spec.n_informative = 17;
  EXPECT_THROW(generate_synthetic(spec), ConfigError);
  spec = SyntheticSpec{};
  spec.default_vocab = 1;
  EXPECT_THROW(generate_synthetic(spec), ConfigError);
}
