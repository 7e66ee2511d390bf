#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfc/freeze.hpp"
#include "mfc/ldp.hpp"
#include "mfc/mfsolver.hpp"
#include "mfc/model.hpp"
#include "mfc/particle.hpp"

namespace mfc {

inline constexpr const char* kArtifactVersion = "1.0.0";

/// Malformed, incomplete or inconsistent experiment configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct InitialSpec {
    std::string kind = "gaussian";  // gaussian | points
    std::vector<double> mean{0.0};
    double sd = 0.25;
    std::vector<std::vector<double>> points;
};

struct PolicySpec {
    std::string kind = "zero";  // zero | constant | linear | mf-control
    std::vector<double> value;  // constant velocity
    double gain = 0.0;          // linear: alpha(x) = -gain * x
    std::string path;           // mf-control file
};

struct ParticleBlock {
    std::vector<std::size_t> n_list{8, 16, 32, 64};
    double dt = 1e-3;
    std::size_t runs = 200;
    std::uint64_t seed = 0;
    std::size_t noise_substeps = 1;
    PolicySpec policy;
};

struct SolverBlock {
    SolverOptions options;
    double delta = 0.1;
    std::vector<double> deltas{0.2, 0.1, 0.05, 0.025};
};

struct TransferBlock {
    double delta = 0.2;
    TransferSettings settings;
};

/// Particles under alpha(x) = -gain x against the forward-equation flow.
struct ChaosBlock {
    double gain = 0.5;
    std::vector<std::size_t> n_list{8, 32, 128};
    std::size_t runs = 100;
};

struct OutputBlock {
    std::string dir = "out";
    bool dump_trajectories = false;
    std::size_t dump_every = 10;
};

struct ExperimentConfig {
    nlohmann::json raw;
    std::string hash;
    ModelSpec model;
    InitialSpec initial;
    SpaceTimeGrid grid;
    ParticleBlock particle;
    SolverBlock solver;
    TransferBlock transfer;
    ChaosBlock chaos;
    LdpOptions ldp;
    OutputBlock output;

    /// Initial density on the solver grid (1D models only).
    GridMeasure1D initial_density() const;
    /// Deterministic initial cloud of n points: grid quantiles in 1D, seeded draws otherwise.
    EmpiricalMeasure initial_points(std::size_t n) const;
    /// Simulation settings for n particles taken from the particle block.
    SimConfig sim_config(std::size_t n) const;
};

nlohmann::json load_config_json(const std::string& path);

/// Applies "a.b.c=value"; value is parsed as JSON when possible, else kept as a string.
void apply_override(nlohmann::json& root, const std::string& assignment);

/// FNV-1a 64-bit hash of the canonical serialization, as 16 hex digits.
std::string config_hash(const nlohmann::json& root);

ExperimentConfig parse_config(const nlohmann::json& root);

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});

/// Comment lines that open every output file.
std::string header_comment(const ExperimentConfig& cfg, const std::string& command);

/// Integrand from {"kind": "smoothed_distance" | "coordinate" | "saturated_square", ...}.
Integrand parse_integrand(const nlohmann::json& spec, std::size_t dim);

/// cap * tanh(|x|^2 / cap): a smooth bounded substitute for min(|x|^2, cap).
Integrand saturated_square(double cap);

}  // namespace mfc
