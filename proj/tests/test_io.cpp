#include "doctest.h"

#include <sstream>

#include "mnar/io.hpp"
#include "support/generators.hpp"

using namespace mnar;

namespace {

IngestResult ingest_text(const std::string& text, IngestOptions opts) {
  std::istringstream in(text);
  return ingest_stream(in, opts, "mem");
}

IngestOptions triples(std::optional<double> threshold = 3.0) {
  IngestOptions o;
  o.binarize_threshold = threshold;
  return o;
}

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("ingest binarizes strictly above the threshold") {
    const auto r = ingest_text("0\t0\t4\n0\t1\t3\n", triples());
    CHECK(r.labels(0, 0) == 1.0);
    CHECK(r.mask.observed(0, 0));
    CHECK(r.labels(0, 1) == 0.0);
    CHECK(r.mask.observed(0, 1));
    CHECK(r.labels.role() == Role::binary_labels);
    CHECK_FALSE(r.test_mask.has_value());
  }

  TEST_CASE("dense zero is unobserved") {
    IngestOptions o;
    o.format = IngestFormat::dense_ascii;
    const auto r = ingest_text("4 0 2\n0 5 1\n", o);
    CHECK_FALSE(r.mask.observed(0, 1));
    CHECK(r.mask.observed(0, 2));
    CHECK(r.mask.observed_count() == 4);
    CHECK(r.labels(1, 1) == 5.0);
  }

  TEST_CASE("split tags, comments and duplicates") {
    const auto r = ingest_text("# header\n\n0 0 4 train\n1 2 1 test\n0 0 2 mnar\n2 1 5 mar\n", triples());
    REQUIRE(r.test_mask.has_value());
    CHECK(r.duplicates == 1);
    CHECK(r.labels(0, 0) == 0.0);
    CHECK(r.test_mask->observed(1, 2));
    CHECK(r.test_mask->observed(2, 1));
    CHECK_FALSE(r.mask.observed(1, 2));
    CHECK(r.labels.rows() == 3);
    CHECK(r.labels.cols() == 3);
  }

  TEST_CASE("remapping assigns dense ids in order of appearance") {
    IngestOptions o = triples(std::nullopt);
    o.remap_ids = true;
    const auto r = ingest_text("alice x 4\nbob y 2\nalice y 1\n", o);
    CHECK(r.user_ids == std::vector<std::string>{"alice", "bob"});
    CHECK(r.item_ids == std::vector<std::string>{"x", "y"});
    CHECK(r.labels(0, 1) == 1.0);
    CHECK(r.labels.role() == Role::generic);
  }

  TEST_CASE("malformed lines report the line number") {
    auto message = [](const std::string& text, IngestOptions o) {
      try {
        ingest_text(text, o);
      } catch (const ValidationError& e) {
        return std::string(e.what());
      }
      return std::string();
    };
    CHECK(message("0 0 4\n0 1\n", triples()).find("mem:2") != std::string::npos);
    CHECK(message("0 0 4\n0 x 4\n", triples()).find("mem:2") != std::string::npos);
    CHECK(message("0 0 4\n# c\n1 1 4 holdout\n", triples()).find("mem:3") != std::string::npos);
    IngestOptions dense;
    dense.format = IngestFormat::dense_ascii;
    CHECK(message("1 2\n3\n", dense).find("mem:2") != std::string::npos);
    CHECK(message("# nothing\n", triples()).find("no data") != std::string::npos);
    CHECK_THROWS_AS(ingest("/nonexistent/path/ratings.tsv", triples()), IoError);
    CHECK_THROWS_AS(ingest_format_from_name("csv"), ConfigError);
  }

  TEST_CASE("fnv1a and float formatting") {
    CHECK(fnv1a_hex("") == "cbf29ce484222325");
    CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
    CHECK(format_float(0.1234567) == "0.123457");
    CHECK(format_float(1e-7) == "1e-07");
    CHECK(format_float(10.25) == "10.25");
  }

  TEST_CASE("matrix and mask round trip") {
    gen::Rng rng(97);
    const auto m = gen::matrix(rng, 3, 4, -1.0, 1.0);
    CHECK(matrix_from_json(matrix_to_json(m.values()), "m") == m.values());
    const auto mask = gen::mask(rng, LabeledMatrixd::constant(3, 4, 0.5, Role::propensity), false);
    CHECK(mask_from_json(mask_to_json(mask), "mask").bits() == mask.bits());
    CHECK_THROWS_AS(matrix_from_json(Json::parse("[[1, 2], [3]]"), "m"), DimensionError);
  }

  TEST_CASE("model checkpoint round trip") {
    auto model = MFModel::init(4, 5, 3, 1);
    model.global_bias = 0.25;
    const Json j = model_to_json(model);
    CHECK(j["format"] == "mnar-mf-checkpoint");
    const MFModel back = model_from_json(Json::parse(j.dump()));
    CHECK(back.user_factors == model.user_factors);
    CHECK(back.item_factors == model.item_factors);
    CHECK(back.user_bias == model.user_bias);
    CHECK(back.item_bias == model.item_bias);
    CHECK(back.global_bias == model.global_bias);
  }

  TEST_CASE("report serialization uses the member names") {
    gen::Rng rng(101);
    const auto in = gen::instance(rng);
    AnalyticInputs<double> ai{in.e, in.e_hat, in.p_true, in.p_hat, std::nullopt, std::nullopt, std::nullopt};
    const Json rep = to_json(bias_variance_report(EstimatorFamily::ips, ai));
    std::vector<std::string> keys;
    for (const auto& [k, v] : rep.items()) keys.push_back(k);
    CHECK(keys == std::vector<std::string>{"estimator", "bias", "variance", "per_cell_bias_factor",
                                           "per_cell_variance_factor"});
    CHECK(rep["estimator"] == "ips");

    const Json bound = to_json(BoundReport{});
    for (const char* k : {"rho", "hypothesis_count", "tail_bound", "point_estimate", "bias_term", "variance_term",
                          "generalization_bound"})
      CHECK(bound.contains(k));

    MonteCarloResult mc;
    const Json mj = to_json(mc);
    for (const char* k :
         {"replicas", "empirical_mean", "empirical_variance", "empirical_bias", "standard_error", "closed_form"})
      CHECK(mj.contains(k));
    CHECK(mj["closed_form"].is_null());

    EvalResult ev;
    ev.per_user_ndcg = {0.5, std::nan("")};
    const Json ej = to_json(ev);
    for (const char* k : {"auc", "ndcg_at_k", "k", "per_user_ndcg"}) CHECK(ej.contains(k));
    CHECK(ej["per_user_ndcg"][1].is_null());
  }

  TEST_CASE("unknown keys are named") {
    const Json obj = Json::parse(R"({"a": 1, "zeta": 2})");
    CHECK_NOTHROW(require_known_keys(obj, {"a", "zeta"}, "root"));
    try {
      require_known_keys(obj, {"a"}, "root");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("zeta") != std::string::npos);
    }
  }
}
