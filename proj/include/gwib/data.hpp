#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gwib/cfr.hpp"
#include "gwib/types.hpp"

namespace gwib {

struct CohortSample {
    vector_t x;
    int t = 0;
    scalar_t y_factual = 0.0;
    std::optional<scalar_t> mu0;
    std::optional<scalar_t> mu1;
};

using Cohort = std::vector<CohortSample>;

// Explicit column mapping; defaults match the canonical layout
// x0..x{d-1}, t, y_factual, mu0, mu1 (mu columns optional).
struct CsvSchema {
    std::string x_prefix = "x";
    std::string t_col = "t";
    std::string y_col = "y_factual";
    std::string mu0_col = "mu0";
    std::string mu1_col = "mu1";
};

Cohort load_csv(const std::string& path, const CsvSchema& schema = CsvSchema());
void write_csv(const std::string& path, const Cohort& samples);

struct SplitSpec {
    scalar_t train_frac = 0.63;
    scalar_t val_frac = 0.27;
    scalar_t test_frac = 0.10;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Splits {
    Cohort train, val, test;
};

// Deterministic shuffled partition; val and test sizes are the rounded
// fractions, the remainder goes to train.
Splits split(const Cohort& samples, const SplitSpec& spec);

// Gaussian covariates, logistic treatment assignment along the fixed
// direction w = 1/sqrt(dim), and smooth closed-form potential outcomes:
//   s1 = sum(x)/sqrt(d), s2 = sum_j (-1)^j x_j / sqrt(d)
//   mu0 = s1 + sin(s1),  mu1 = mu0 + 2 + 1.5 tanh(s2)
// so the true effect varies with x. y = mu_t + Gaussian(0, noise_sd).
Cohort gen_synthetic(index_t n, index_t dim, scalar_t bias_strength, scalar_t noise_sd,
                     std::uint64_t seed);

// Per-column z-score parameters fitted on the training split. Columns whose
// values all lie in {0,1} (one-hot indicators) are left untouched, as are
// constant columns.
struct Scaler {
    vector_t mean, scale;          // scale = 1/sd for scaled columns, 1 otherwise
    std::vector<char> scaled_col;  // 1 where standardization applies

    static Scaler fit(const Cohort& train);
    void apply(Cohort& samples) const;
};

// Matrix/vector views the trainer and metrics operate on.
Batch to_batch(const Cohort& samples);
matrix_t group_covariates(const Cohort& samples, int group);

}  // namespace gwib
