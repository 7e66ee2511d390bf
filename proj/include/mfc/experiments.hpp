#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mfc/config.hpp"
#include "mfc/freeze.hpp"
#include "mfc/mfsolver.hpp"
#include "mfc/particle.hpp"

namespace mfc {

/// Per-point feedback named by the particle policy block.
PointControl make_point_control(const PolicySpec& spec, std::size_t dim);

/// alpha(t, x) read off a tabulated 1D control.
PointControl point_control(GridControl control);

/// Applies a per-point control to every particle.
Policy broadcast(PointControl alpha, std::size_t dim);

struct TransferRow {
    std::size_t n = 0;
    std::size_t runs = 0;
    std::size_t completed = 0;
    double mean_j = 0.0;
    double se = 0.0;
    double e_tau_gap = 0.0;
    double u_delta = 0.0;
    double gap = 0.0;
    double worst_ratio = 0.0;
    double post_tau_energy = 0.0;
    double bound = 0.0;
    std::size_t violations = 0;
};

/// transfer_batch for every N, compared with a reference value u_delta.
std::vector<TransferRow> transfer_sweep(const std::function<SimConfig(std::size_t)>& make_config,
                                        const ModelSpec& model, const PointControl& alpha,
                                        double delta, double u_delta,
                                        const std::vector<std::size_t>& n_list, std::size_t runs,
                                        std::vector<TransferBatch>* batches = nullptr,
                                        const TransferSettings& settings = {});

/// CSV: N,mean_J,se,E_tau_gap,U_delta,gap.
void write_transfer_table(const std::string& path, const std::vector<TransferRow>& rows,
                          const std::string& header_comment);

struct ChaosRow {
    std::size_t n = 0;
    std::size_t runs = 0;
    double mean_sup_d1 = 0.0;
    double se = 0.0;
};

/// Monte Carlo E[sup_t d_1(empirical(t), mu(t))] for the feedback alpha(x) = -gain x, with
/// mu(t) from the forward equation on `grid`. The particle step must divide the grid step.
std::vector<ChaosRow> chaos_experiment(const ModelSpec& model, const GridMeasure1D& mu0,
                                       const SpaceTimeGrid& grid, double gain, double dt,
                                       std::uint64_t seed, const std::vector<std::size_t>& n_list,
                                       std::size_t runs);

/// CSV: N,M,mean_sup_d1,se.
void write_chaos_table(const std::string& path, const std::vector<ChaosRow>& rows,
                       const std::string& header_comment);

/// Per-run CSV: run,total_cost,control_energy,tau,violated,final_second_moment.
void write_batch_table(const std::string& path, const BatchResult& batch,
                       const std::string& header_comment);

}  // namespace mfc
