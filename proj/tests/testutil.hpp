#pragma once

#include <algorithm>
#include <cstdio>
#include <string>
#include <vector>

#include "fairaudit/linalg.hpp"
#include "fairaudit/rng.hpp"

namespace testutil {

using fairaudit::Index;
using fairaudit::IntVector;
using fairaudit::Matrix;
using fairaudit::Vector;

/// Brute-force AUC oracle: P(score_pos > score_neg) + 0.5 P(tie) over all
/// positive/negative pairs. Independent of the threshold-sweep construction.
inline double pairwise_auc(const Vector& scores, const IntVector& label) {
  double wins = 0.0;
  std::int64_t pairs = 0;
  for (Index i = 0; i < scores.size(); ++i) {
    if (label[i] != 1) continue;
    for (Index j = 0; j < scores.size(); ++j) {
      if (label[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j])
        wins += 1.0;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Census-style CSV fixture with the adult preset's columns. Both groups
/// share a moderate class signal (education, age, occupation); the majority
/// group carries an extra strong signal on hours_per_week that a model
/// trained on skewed data over-weights, which costs it accuracy parity on
/// the minority.
inline std::string make_census_csv(Index n, std::uint64_t seed) {
  fairaudit::Rng rng(seed);
  std::string csv =
      "age,workclass,education_num,marital_status,occupation,capital_gain,"
      "capital_loss,hours_per_week,sex,income\n";
  char buf[256];
  for (Index i = 0; i < n; ++i) {
    const bool male = rng.uniform() < 0.65;
    const bool high = rng.uniform() < 0.5;
    const double age = 38.0 + (high ? 2.0 : 0.0) + 11.0 * rng.normal();
    const double edu = 10.0 + (high ? 1.6 : 0.0) + 2.2 * rng.normal();
    const double hours =
        40.0 + (male && high ? 8.0 : 0.0) + 9.0 * rng.normal();
    const double gain = std::max(
        0.0, (male ? 600.0 : 300.0) + (high ? (male ? 300.0 : 500.0) : 0.0) +
                 1000.0 * rng.normal());
    const double loss = std::max(0.0, 80.0 + 250.0 * rng.normal());
    const double uw = rng.uniform();
    const char* workclass = uw < (high ? 0.62 : 0.55)  ? "Private"
                            : uw < 0.78                ? "Self-emp"
                            : uw < 0.92                ? "Gov"
                                                       : "Other";
    const double um = rng.uniform();
    const char* marital = male ? (um < 0.68 ? "Married" : "Single")
                               : (um < 0.35 ? "Married" : "Single");
    const double uo = rng.uniform();
    const char* occupation = uo < (high ? 0.42 : 0.22)  ? "Exec"
                             : uo < (high ? 0.68 : 0.5) ? "Prof"
                             : uo < 0.85                ? "Craft"
                                                        : "Service";
    std::snprintf(buf, sizeof(buf),
                  "%.2f,%s,%.2f,%s,%s,%.2f,%.2f,%.2f,%s,%s\n", age, workclass,
                  edu, marital, occupation, gain, loss, hours,
                  male ? "Male" : "Female", high ? ">50K" : "<=50K");
    csv += buf;
  }
  return csv;
}

}  // namespace testutil
