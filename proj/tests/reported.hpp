#pragma once

// Published per-study heterogeneity contributions for the three case-study
// networks, in corpus row order.  Three significant figures.

#include <array>

namespace nma::testing::reported {

inline constexpr std::array<double, 29> table1_q_het_i{
    0.908, 0.0528, 2.76, 6.00, 2.03, 1.52, 5.12, 4.55, 0.0225, 0.512, 3.06, 0.321, 2.58, 0.0999, 4.33,
    9.25,  0.0218, 1.48, 1.24, 0.103, 3.36, 1.57, 23.3, 2.79, 0.00983, 0.815, 0.0690, 3.50, 0.922};

inline constexpr std::array<double, 20> table2_q_het_i{
    0.130, 0.526, 0.011, 0.428, 0.279, 2.260, 0.885, 5.940, 3.870, 0.562,
    0.036, 0.721, 3.260, 0.000, 0.000, 0.000, 0.001, 4.530, 0.063, 0.000};

inline constexpr std::array<double, 32> table3_q_het_i{
    2.07, 2.65, 5.49, 0.517, 10.80, 1.93, 2.45, 2.53, 2.66, 1.05, 1.81,  7.23, 3.05, 1.54, 2.98, 5.06,
    10.30, 1.23, 0.108, 2.38, 36.40, 12.70, 0.270, 0.915, 0.165, 3.44, 6.34, 42.70, 12.80, 2.30, 1.20, 3.03};

}  // namespace nma::testing::reported
