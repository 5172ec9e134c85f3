// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <future>

#include "a3d/presets.hpp"
#include "a3d/service.hpp"

using namespace a3d;
namespace fs = std::filesystem;

namespace {

Checkpoint make_checkpoint(std::uint64_t seed) {
  LatentField<float> f(toy_field_config(2));
  f.initialize(seed);
  Rng rng(seed + 100);
  for (auto& p : f.params()) p += static_cast<float>(rng.uniform(-0.2, 0.2));
  return Checkpoint::from_field(f, {"sphere", "box"}, seed, toy_render_config());
}

std::string bytes_str(const Bytes& b) { return std::string(b.begin(), b.end()); }

json orbit_request(const json& latent, const json& maps = {"rgb"}) {
  return {{"camera", {{"orbit", {{"azimuth_deg", 30}, {"elevation_deg", 20}}},
                      {"width", 20}, {"height", 16}}},
          {"latent", latent},
          {"maps", maps}};
}

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    model = std::make_shared<const Model>(make_checkpoint(1));
    service = std::make_unique<RenderService>(model);
    client = std::make_unique<httplib::Client>("127.0.0.1", service->start());
  }
  void TearDown() override { service->stop(); }

  httplib::Result post(const std::string& path, const json& body) {
    return client->Post(path, body.dump(), "application/json");
  }

  Bytes direct(const json& body, MapKind kind = MapKind::rgb) {
    const auto req = parse_render_request(body, 2, model->field.config().grid.bounds);
    for (auto& [k, b] : render_maps(*model, req).pngs)
      if (k == kind) return b;
    return {};
  }

  std::shared_ptr<const Model> model;
  std::unique_ptr<RenderService> service;
  std::unique_ptr<httplib::Client> client;
};

std::vector<std::string> error_paths(const std::string& body) {
  std::vector<std::string> out;
  const json parsed = json::parse(body);
  for (const auto& e : parsed.at("errors")) out.push_back(e.at("path").get<std::string>());
  return out;
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

}  // namespace

TEST_F(ServiceTest, HealthAndInfo) {
  auto h = client->Get("/health");
  ASSERT_TRUE(h);
  EXPECT_EQ(h->status, 200);
  EXPECT_EQ(json::parse(h->body)["status"], "ok");
  auto i = client->Get("/model/info");
  ASSERT_TRUE(i);
  const json info = json::parse(i->body);
  EXPECT_EQ(info["N"], 2);
  EXPECT_EQ(info["prompts"], json({"sphere", "box"}));
  EXPECT_EQ(info["bounds"]["lo"], json({-1.0, -1.0, -1.0}));
  EXPECT_EQ(info["image_limits"]["max_width"], 1024);
}

TEST_F(ServiceTest, RenderBytesEqualDirectRender) {
  const json body = orbit_request({{"fixed", {0.3, 0.7}}});
  auto r = post("/render", body);
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 200) << r->body;
  EXPECT_EQ(r->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(r->get_header_value("X-A3D-Maps"), "rgb");
  EXPECT_EQ(r->body, bytes_str(direct(body)));
  const auto png = decode_png(Bytes(r->body.begin(), r->body.end()));
  EXPECT_EQ(png.width, 20u);
  EXPECT_EQ(png.height, 16u);
  EXPECT_EQ(png.channels, 3u);
}

TEST_F(ServiceTest, MultipleMapsAsMultipart) {
  const json body = orbit_request({{"fixed", {1.0, 0.0}}}, {"rgb", "normal", "depth", "opacity"});
  auto r = post("/render", body);
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 200) << r->body;
  const std::string ct = r->get_header_value("Content-Type");
  const std::string key = "boundary=";
  ASSERT_NE(ct.find("multipart/mixed"), std::string::npos);
  const std::string boundary = ct.substr(ct.find(key) + key.size());
  const auto parts = decode_multipart(r->body, boundary);
  ASSERT_EQ(parts.size(), 4u);
  const char* names[] = {"rgb", "normal", "depth", "opacity"};
  const MapKind kinds[] = {MapKind::rgb, MapKind::normal, MapKind::depth, MapKind::opacity};
  for (int k = 0; k < 4; ++k) {
    EXPECT_EQ(parts[std::size_t(k)].first, names[k]);
    EXPECT_EQ(parts[std::size_t(k)].second, direct(body, kinds[k]));
  }
  EXPECT_EQ(r->get_header_value("X-A3D-Maps"), "rgb,normal,depth,opacity");
  EXPECT_EQ(std::stod(r->get_header_value("X-A3D-Depth-Near")), model->render.near);
  EXPECT_EQ(std::stod(r->get_header_value("X-A3D-Depth-Far")), model->render.far);
  EXPECT_EQ(decode_png(parts[2].second).bit_depth, 16);
}

TEST(Multipart, RoundTripWithBinaryContent) {
  RenderedMaps maps;
  maps.pngs.push_back({MapKind::rgb, Bytes{'-', '-', 'a', '3', 'd', '-', 'm', 'a', 'p', 's', 0, 255}});
  maps.pngs.push_back({MapKind::depth, Bytes{'\r', '\n', 1, 2}});
  const std::string b = multipart_boundary(maps);
  EXPECT_NE(b, "a3d-maps");
  const auto parts = decode_multipart(encode_multipart(maps, b), b);
  ASSERT_EQ(parts.size(), 2u);
  EXPECT_EQ(parts[0].first, "rgb");
  EXPECT_EQ(parts[0].second, maps.pngs[0].second);
  EXPECT_EQ(parts[1].first, "depth");
  EXPECT_EQ(parts[1].second, maps.pngs[1].second);
}

TEST_F(ServiceTest, SingleAnchorEqualsFixedCode) {
  const json fixed = orbit_request({{"fixed", {0.25, 0.75}}});
  const json anchor = orbit_request({{"anchors", {{{"pos", {0.1, -0.2, 0.3}}, {"code", {0.25, 0.75}}}}}});
  auto a = post("/render", fixed);
  auto b = post("/render", anchor);
  ASSERT_TRUE(a && b);
  ASSERT_EQ(b->status, 200) << b->body;
  EXPECT_EQ(a->body, b->body);
}

TEST_F(ServiceTest, SweepEndpointsEqualVertexRenders) {
  for (int t : {0, 1}) {
    auto sweep = post("/render", orbit_request({{"sweep_t", t}, {"pair", {0, 1}}}));
    // t = 1 selects the first index of the pair
    const json code = t == 1 ? json({1.0, 0.0}) : json({0.0, 1.0});
    auto vertex = post("/render", orbit_request({{"fixed", code}}));
    ASSERT_TRUE(sweep && vertex);
    ASSERT_EQ(sweep->status, 200) << sweep->body;
    EXPECT_EQ(sweep->body, vertex->body) << "t=" << t;
  }
  auto mid = post("/render", orbit_request({{"sweep_t", 0.5}, {"pair", {1, 0}}}));
  auto half = post("/render", orbit_request({{"fixed", {0.5, 0.5}}}));
  ASSERT_TRUE(mid && half);
  EXPECT_EQ(mid->body, half->body);
}

TEST_F(ServiceTest, ConcurrentIdenticalRequestsAgree) {
  const json body = orbit_request({{"fixed", {0.6, 0.4}}}, {"rgb", "depth"});
  const std::string expected = post("/render", body)->body;
  std::vector<std::future<std::string>> jobs;
  const int port = service->port();
  for (int k = 0; k < 8; ++k)
    jobs.push_back(std::async(std::launch::async, [&, port] {
      httplib::Client c("127.0.0.1", port);
      auto r = c.Post("/render", body.dump(), "application/json");
      return r && r->status == 200 ? r->body : std::string("failed");
    }));
  for (auto& j : jobs) EXPECT_EQ(j.get(), expected);
}

TEST_F(ServiceTest, InvalidRequestsListEveryPath) {
  const json body = {{"camera", {{"width", 0}, {"height", 5000}, {"orbit", {{"elevation_deg", 95}}}}},
                     {"latent", {{"fixed", {0.5, 0.6}}}},
                     {"maps", {"rgb", "albedo"}},
                     {"extra", 1}};
  auto r = post("/render", body);
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 400);
  const auto paths = error_paths(r->body);
  EXPECT_TRUE(contains(paths, "/camera/width"));
  EXPECT_TRUE(contains(paths, "/camera/height"));
  EXPECT_TRUE(contains(paths, "/camera/orbit/elevation_deg"));
  EXPECT_TRUE(contains(paths, "/latent/fixed"));
  EXPECT_TRUE(contains(paths, "/maps/1"));
  EXPECT_TRUE(contains(paths, "/extra"));
}

TEST_F(ServiceTest, LatentErrors) {
  auto wrong_len = post("/render", orbit_request({{"fixed", {0.2, 0.3, 0.5}}}));
  ASSERT_TRUE(wrong_len);
  EXPECT_EQ(wrong_len->status, 400);
  EXPECT_TRUE(contains(error_paths(wrong_len->body), "/latent/fixed"));
  auto both = post("/render", orbit_request({{"fixed", {1, 0}}, {"sweep_t", 0.5}}));
  EXPECT_EQ(both->status, 400);
  EXPECT_TRUE(contains(error_paths(both->body), "/latent"));
  auto pair = post("/render", orbit_request({{"sweep_t", 0.5}, {"pair", {0, 0}}}));
  EXPECT_EQ(pair->status, 400);
  EXPECT_TRUE(contains(error_paths(pair->body), "/latent/pair"));
  auto missing = post("/render", json{{"latent", {{"fixed", {1, 0}}}}});
  EXPECT_EQ(missing->status, 400);
  EXPECT_TRUE(contains(error_paths(missing->body), "/camera"));
  auto malformed = client->Post("/render", "{not json", "application/json");
  EXPECT_EQ(malformed->status, 400);
}

TEST_F(ServiceTest, AnchorValidationRoundTrip) {
  const std::string text = "# two objects\n0 0 0.45 1 0\n0 0 -0.45 0 1\n";
  auto r = client->Post("/anchors/validate", text, "text/plain");
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 200) << r->body;
  const json ok = json::parse(r->body);
  ASSERT_EQ(ok["anchors"].size(), 2u);
  EXPECT_EQ(ok["anchors"][1]["pos"], json({0.0, 0.0, -0.45}));
  const auto reparsed = parse_anchors(ok["text"].get<std::string>());
  ASSERT_TRUE(reparsed.ok());
  EXPECT_EQ(reparsed.set.anchors.size(), 2u);
  EXPECT_EQ(reparsed.set.anchors[0].position.z, 0.45);

  // the JSON form of the answer validates to the same set
  auto again = post("/anchors/validate", json{{"anchors", ok["anchors"]}});
  ASSERT_TRUE(again);
  EXPECT_EQ(again->status, 200);
  EXPECT_EQ(json::parse(again->body)["text"], ok["text"]);
}

TEST_F(ServiceTest, AnchorValidationErrors) {
  auto bad_text = client->Post("/anchors/validate", "0 0 0 0.5 0.6\n1 1\n", "text/plain");
  ASSERT_TRUE(bad_text);
  EXPECT_EQ(bad_text->status, 422);
  const json e = json::parse(bad_text->body);
  ASSERT_EQ(e["errors"].size(), 2u);
  EXPECT_NE(e["errors"][0]["message"].get<std::string>().find("line 1"), std::string::npos);
  EXPECT_NE(e["errors"][1]["message"].get<std::string>().find("line 2"), std::string::npos);

  auto outside = post("/anchors/validate",
                      json{{"anchors", {{{"pos", {0, 0, 3}}, {"code", {1, 0}}}}}});
  EXPECT_EQ(outside->status, 422);
  EXPECT_TRUE(contains(error_paths(outside->body), "/anchors/0/pos"));

  auto dup = post("/anchors/validate", json{{"anchors", {{{"pos", {0, 0, 0}}, {"code", {1, 0}}},
                                                         {{"pos", {0, 0, 0}}, {"code", {0, 1}}}}}});
  EXPECT_EQ(dup->status, 422);
  EXPECT_TRUE(contains(error_paths(dup->body), "/anchors/1/pos"));

  auto wrong_dim = client->Post("/anchors/validate", "0 0 0 0.2 0.3 0.5\n", "text/plain");
  EXPECT_EQ(wrong_dim->status, 422);
}

TEST_F(ServiceTest, ModelLoadSwapsAndRejectsBadFiles) {
  const fs::path dir = fs::temp_directory_path() / ("a3d_service_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const Checkpoint other = make_checkpoint(7);
  save_checkpoint(dir / "other.a3d", other);
  const json body = orbit_request({{"fixed", {0.5, 0.5}}});
  const std::string before = post("/render", body)->body;

  auto bad = post("/model/load", json{{"checkpoint", (dir / "missing.a3d").string()}});
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 422);
  EXPECT_TRUE(contains(error_paths(bad->body), "/checkpoint"));
  {
    auto b = encode_checkpoint(other);
    b[b.size() / 2] ^= 1;
    detail::write_file_atomic(dir / "corrupt.a3d", b);
  }
  auto corrupt = post("/model/load", json{{"checkpoint", (dir / "corrupt.a3d").string()}});
  EXPECT_EQ(corrupt->status, 422);
  EXPECT_NE(corrupt->body.find("checksum mismatch"), std::string::npos);
  EXPECT_EQ(post("/render", body)->body, before);

  auto good = post("/model/load", json{{"checkpoint", (dir / "other.a3d").string()}});
  ASSERT_EQ(good->status, 200) << good->body;
  EXPECT_EQ(json::parse(good->body)["iteration"], 7);
  const std::string after = post("/render", body)->body;
  EXPECT_NE(after, before);
  const Model m(other);
  const auto req = parse_render_request(body, 2, m.field.config().grid.bounds);
  EXPECT_EQ(after, bytes_str(render_maps(m, req).pngs.front().second));
  fs::remove_all(dir);
}

TEST(RenderRequest, ImageLimitsApply) {
  const Box3<double> bounds{{-1, -1, -1}, {1, 1, 1}};
  ImageLimits limits;
  limits.max_width = 64;
  limits.max_height = 64;
  const json body = {{"camera", {{"position", {0, -2, 0}}, {"width", 65}, {"height", 64}}},
                     {"latent", {{"fixed", {1.0}}}}};
  try {
    parse_render_request(body, 1, bounds, limits);
    FAIL() << "expected RequestErrors";
  } catch (const RequestErrors& e) {
    const json j = e.to_json();
    ASSERT_EQ(j["errors"].size(), 1u);
    EXPECT_EQ(j["errors"][0]["path"], "/camera/width");
  }
}

TEST(RenderRequest, ExplicitCameraDefaultsTargetToCenter) {
  const Box3<double> bounds{{-1, -1, -1}, {1, 1, 1}};
  const json body = {{"camera", {{"position", {0, -2, 0.5}}, {"width", 8}, {"height", 8}}},
                     {"latent", {{"fixed", {1.0}}}}};
  const auto req = parse_render_request(body, 1, bounds);
  EXPECT_EQ(req.camera.target, (Vec3d{0, 0, 0}));
  EXPECT_EQ(req.maps, std::vector<MapKind>{MapKind::rgb});
}
