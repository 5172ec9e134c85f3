// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "a3d/config.hpp"
#include "a3d/presets.hpp"

using namespace a3d;

namespace {

const std::filesystem::path kSamples = std::filesystem::path(A3D_SOURCE_DIR) / "samples";

std::vector<std::string> errors_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigErrors& e) {
    return e.errors();
  }
  return {};
}

bool has_error_at(const std::vector<std::string>& errors, const std::string& path) {
  return std::any_of(errors.begin(), errors.end(),
                     [&](const std::string& e) { return e.rfind(path + ":", 0) == 0; });
}

}  // namespace

TEST(Config, MinimalTwoPromptDefaults) {
  const auto c = parse_config(R"({"prompts": ["a chair", "a table"]})");
  ASSERT_EQ(c.prompts.size(), 2u);
  EXPECT_EQ(c.latent_dim(), 2u);
  EXPECT_DOUBLE_EQ(c.generation.p, 0.5);
  EXPECT_EQ(c.field.mlp.hidden_layers, 1u);
  EXPECT_EQ(c.field.latent_dim, 2u);
  EXPECT_EQ(c.schedule.horizon, c.generation.iterations);
  EXPECT_EQ(c.critic.kind, CriticSpec::Kind::point_mass);
  EXPECT_EQ(c.critic.shapes.size(), 2u);
  EXPECT_FALSE(c.transform.has_value());
}

TEST(Config, NegativeWeightIsRejectedByPath) {
  const auto e = errors_of(R"({"prompts": ["a", "b"], "generation": {"sds_weight": -1}})");
  ASSERT_FALSE(e.empty());
  EXPECT_TRUE(has_error_at(e, "/generation/sds_weight"));
  const auto e2 =
      errors_of(R"({"prompts": ["a", "b"], "generation": {"normal_smoothness_weight": -0.5}})");
  EXPECT_TRUE(has_error_at(e2, "/generation/normal_smoothness_weight"));
}

TEST(Config, ErrorMessageNamesTheField) {
  try {
    parse_config(R"({"prompts": ["a", "b"], "generation": {"orientation_weight_end": -3}})");
    FAIL() << "expected ConfigErrors";
  } catch (const ConfigErrors& e) {
    EXPECT_NE(std::string(e.what()).find("orientation_weight_end"), std::string::npos);
  }
}

TEST(Config, AllProblemsReportedTogether) {
  const auto e = errors_of(
      R"({"prompts": ["a", "b"], "seed": -1, "colour": 1, "render": {"n_samples": "x"},
          "generation": {"p": 1.5}})");
  EXPECT_TRUE(has_error_at(e, "/seed"));
  EXPECT_TRUE(has_error_at(e, "/colour"));
  EXPECT_TRUE(has_error_at(e, "/render/n_samples"));
  EXPECT_TRUE(has_error_at(e, "/generation/p"));
}

TEST(Config, UnknownNestedKey) {
  const auto e = errors_of(R"({"prompts": ["a", "b"], "field": {"mlp": {"depth": 2}}})");
  ASSERT_EQ(e.size(), 1u);
  EXPECT_TRUE(has_error_at(e, "/field/mlp/depth"));
}

TEST(Config, MissingOrEmptyPrompts) {
  EXPECT_TRUE(has_error_at(errors_of("{}"), "/prompts"));
  EXPECT_TRUE(has_error_at(errors_of(R"({"prompts": []})"), "/prompts"));
  EXPECT_TRUE(has_error_at(errors_of(R"({"prompts": ["a", 3]})"), "/prompts/1"));
}

TEST(Config, MalformedJson) {
  const auto e = errors_of("{\"prompts\": [");
  ASSERT_EQ(e.size(), 1u);
  EXPECT_NE(e[0].find("malformed JSON"), std::string::npos);
}

TEST(Config, HiddenLayersOutOfRange) {
  const auto e = errors_of(R"({"prompts": ["a", "b"], "field": {"mlp": {"hidden_layers": 4}}})");
  EXPECT_TRUE(has_error_at(e, "/field/mlp/hidden_layers"));
}

TEST(Config, RoundTripIsStable) {
  const std::string text = R"({
    "prompts": ["a red chair", "a wooden table", "a lamp"],
    "general_prompt": "furniture",
    "seed": 17,
    "field": {"mlp": {"hidden_layers": 2, "width": 32}},
    "render": {"n_samples": 48},
    "generation": {"iterations": 500, "p": 0.25, "conditioning_mode": "general_prompt",
                   "guidance_scale": 7.5},
    "critic": {"kind": "remote", "url": "http://localhost:8700"},
    "schedule": {"horizon": 300}
  })";
  const auto a = parse_config(text);
  const std::string s1 = serialize_config(a);
  const auto b = parse_config(s1);
  const std::string s2 = serialize_config(b);
  EXPECT_EQ(s1, s2);
  EXPECT_EQ(b.prompts, a.prompts);
  EXPECT_EQ(b.general_prompt, "furniture");
  EXPECT_EQ(b.seed, 17u);
  EXPECT_EQ(b.field.mlp.hidden_layers, 2u);
  EXPECT_DOUBLE_EQ(b.generation.p, 0.25);
  EXPECT_EQ(b.generation.conditioning_mode, ConditioningMode::general_prompt);
  EXPECT_EQ(b.schedule.horizon, 300u);
}

TEST(Config, RoundTripKeepsNonTerminatingDecimals) {
  const auto a = parse_config(R"({"prompts": ["a", "b"], "generation": {"p": 0.1}})");
  const auto b = parse_config(serialize_config(a));
  EXPECT_EQ(a.generation.p, b.generation.p);
}

TEST(Config, ToySampleMatchesPreset) {
  const auto loaded = load_config(kSamples / "toy.json");
  EXPECT_EQ(serialize_config(loaded), serialize_config(toy_session()));
}

TEST(Config, TransformSampleRoundTrips) {
  const auto a = load_config(kSamples / "transform_toy.json");
  ASSERT_TRUE(a.transform.has_value());
  ASSERT_TRUE(a.transform->source.shape.has_value());
  EXPECT_EQ(a.transform->fit.iterations, 1500u);
  const auto b = parse_config(serialize_config(a), kSamples);
  EXPECT_EQ(serialize_config(a), serialize_config(b));
}

TEST(Config, RemoteCriticSection) {
  const auto c = parse_config(
      R"({"prompts": ["a", "b"],
          "critic": {"kind": "remote", "url": "http://127.0.0.1:9000", "retries": 5}})");
  EXPECT_EQ(c.critic.kind, CriticSpec::Kind::remote);
  EXPECT_EQ(c.critic.remote.url, "http://127.0.0.1:9000");
  EXPECT_EQ(c.critic.remote.retries, 5u);
  EXPECT_EQ(serialize_config(parse_config(serialize_config(c))), serialize_config(c));

  EXPECT_TRUE(has_error_at(errors_of(R"({"prompts": ["a"], "critic": {"kind": "remote"}})"),
                           "/critic/url"));
  EXPECT_TRUE(has_error_at(
      errors_of(R"({"prompts": ["a"], "critic": {"kind": "remote", "url": "x", "max_in_flight": 0}})"),
      "/critic/max_in_flight"));
  EXPECT_TRUE(has_error_at(errors_of(R"({"prompts": ["a"], "critic": {"kind": "oracle"}})"),
                           "/critic/kind"));
}

TEST(Config, PointMassNeedsOneShapePerPrompt) {
  const auto e = errors_of(
      R"({"prompts": ["a", "b", "c"]})");
  EXPECT_TRUE(has_error_at(e, "/critic"));
  const auto ok = parse_config(
      R"({"prompts": ["a"], "critic": {"shapes": [{"kind": "sphere", "radius": 0.3}]}})");
  ASSERT_EQ(ok.critic.shapes.size(), 1u);
  EXPECT_DOUBLE_EQ(ok.critic.shapes[0].size.x, 0.3);
}

TEST(Config, ShapeValidation) {
  EXPECT_TRUE(has_error_at(
      errors_of(R"({"prompts": ["a"], "critic": {"shapes": [{"kind": "box", "half_extent": [1, 0, 1]}]}})"),
      "/critic/shapes/0/half_extent"));
  EXPECT_TRUE(has_error_at(
      errors_of(R"({"prompts": ["a"], "critic": {"shapes": [{"kind": "sphere"}]}})"),
      "/critic/shapes/0/radius"));
  EXPECT_TRUE(has_error_at(
      errors_of(R"({"prompts": ["a"], "critic": {"shapes_file": "missing.json"}})"),
      "/critic/shapes_file"));
}

TEST(Config, GeneralPromptModeNeedsPrompt) {
  const auto e = errors_of(
      R"({"prompts": ["a", "b"], "generation": {"conditioning_mode": "general_prompt"}})");
  EXPECT_TRUE(has_error_at(e, "/general_prompt"));
  EXPECT_TRUE(has_error_at(
      errors_of(R"({"prompts": ["a", "b"], "generation": {"conditioning_mode": "mixed"}})"),
      "/generation/conditioning_mode"));
}

TEST(Config, TransformValidation) {
  const std::string shape = R"({"kind": "sphere", "radius": 0.2})";
  EXPECT_TRUE(has_error_at(
      errors_of(R"({"prompts": ["a", "b"], "transform": {"source": {}}})"), "/transform/source"));
  EXPECT_TRUE(has_error_at(
      errors_of(R"({"prompts": ["a", "b"], "transform": {"source": {"shape": )" + shape +
                R"(, "checkpoint": "x.a3d"}}})"),
      "/transform/source"));
  EXPECT_TRUE(has_error_at(
      errors_of(R"({"prompts": ["a", "b"], "transform": {"source": {"checkpoint": "nope.a3d"}}})"),
      "/transform/source/checkpoint"));
  EXPECT_TRUE(has_error_at(
      errors_of(R"({"prompts": ["a", "b", "c"], "critic": {"shapes": [)" + shape + "," + shape +
                "," + shape + R"(]}, "transform": {"source": {"shape": )" + shape + "}}}"),
      "/transform"));
  EXPECT_TRUE(has_error_at(
      errors_of(R"({"prompts": ["a", "b"], "transform": {"source": {"shape": )" + shape +
                R"(}, "source_vertex_index": 2}})"),
      "/transform/source_vertex_index"));
  EXPECT_TRUE(has_error_at(
      errors_of(R"({"prompts": ["a", "b"], "transform": {"source": {"shape": )" + shape +
                R"(}, "photometric_weight": -1}})"),
      "/transform/photometric_weight"));
}

TEST(Config, LoadResolvesRelativeFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "a3d_config_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream(dir / "shapes.json")
        << R"([{"kind": "sphere", "radius": 0.4}, {"kind": "box", "half_extent": [0.1, 0.2, 0.3]}])";
    std::ofstream(dir / "c.json")
        << R"({"prompts": ["a", "b"], "critic": {"shapes_file": "shapes.json"}})";
  }
  const auto c = load_config(dir / "c.json");
  ASSERT_EQ(c.critic.shapes.size(), 2u);
  EXPECT_EQ(c.critic.shapes[1].kind, Shape::Kind::box);
  EXPECT_DOUBLE_EQ(c.critic.shapes[1].size.z, 0.3);
  EXPECT_THROW(load_config(dir / "absent.json"), ConfigError);
  std::filesystem::remove_all(dir);
}
