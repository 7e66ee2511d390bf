#include <doctest.h>

#include <string>

#include "mfc/config.hpp"

using namespace mfc;
using nlohmann::json;

namespace {

const std::string kShipped = std::string(MFC_CONFIG_DIR) + "/shipped.json";

}  // namespace

TEST_CASE("shipped config loads") {
    const auto cfg = load_config(kShipped);
    CHECK(cfg.model.dim == 1);
    CHECK(cfg.model.constraint.kappa() == 1.0);
    CHECK(cfg.model.constraint.lipschitz() == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(cfg.particle.seed == 20260607);
    CHECK(cfg.solver.deltas.size() == 4);
    CHECK(cfg.hash.size() == 16);
    CHECK(cfg.initial_density().mass() == doctest::Approx(1.0));
    CHECK(cfg.initial_points(8).size() == 8);
}

TEST_CASE("overrides change values and the hash") {
    const auto base = load_config(kShipped);
    const auto changed = load_config(kShipped, {"particle.dt=0.002", "solver.k_max=10", "output.dir=elsewhere"});
    CHECK(changed.particle.dt == 0.002);
    CHECK(changed.solver.options.k_max == 10);
    CHECK(changed.output.dir == "elsewhere");
    CHECK(changed.hash != base.hash);
    CHECK(load_config(kShipped).hash == base.hash);
}

TEST_CASE("hash is FNV-1a of the compact dump") {
    // FNV-1a 64 of "{}" computed by hand from the offset basis and prime.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : std::string("{}")) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    CHECK(config_hash(json::object()) == buf);
}

TEST_CASE("malformed configs are rejected") {
    json root = load_config_json(kShipped);
    SUBCASE("missing seed") {
        root["particle"].erase("seed");
        CHECK_THROWS_AS(parse_config(root), ConfigError);
    }
    SUBCASE("unknown key") {
        root["grid"]["cells"] = 10;
        CHECK_THROWS_AS(parse_config(root), ConfigError);
    }
    SUBCASE("unknown integrand") {
        root["model"]["constraint"]["integrand"]["kind"] = "spline";
        CHECK_THROWS_AS(parse_config(root), ConfigError);
    }
    SUBCASE("bad override") {
        CHECK_THROWS_AS(apply_override(root, "no_equals_sign"), ConfigError);
        CHECK_THROWS_AS(apply_override(root, "grid..x=1"), ConfigError);
    }
    CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("output header") {
    const auto cfg = load_config(kShipped);
    const std::string h = header_comment(cfg, "stability");
    CHECK(h == "# mfclab 1.0.0\n# config_hash fnv1a64:" + cfg.hash + "\n# command stability\n");
}
