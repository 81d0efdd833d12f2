#include "fairaudit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "fairaudit/errors.hpp"
#include "fairaudit/rng.hpp"

namespace fairaudit {

namespace {

bool is_missing(const std::string& v) { return v.empty() || v == "?"; }

bool parse_double(const std::string& s, double& out) {
  const char* begin = s.c_str();
  char* end = nullptr;
  out = std::strtod(begin, &end);
  return end == begin + s.size() && end != begin && std::isfinite(out);
}

/// RFC 4180 parse: quoted fields may contain commas, newlines and doubled
/// quotes. Accepts both \n and \r\n row terminators.
std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool row_has_content = false;

  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
  };
  auto end_row = [&] {
    end_field();
    rows.push_back(std::move(row));
    row.clear();
    row_has_content = false;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        in_quotes = true;
        row_has_content = true;
        break;
      case ',':
        end_field();
        row_has_content = true;
        break;
      case '\r':
        break;
      case '\n':
        if (row_has_content || !field.empty() || !row.empty()) end_row();
        break;
      default:
        field.push_back(c);
        row_has_content = true;
    }
  }
  if (row_has_content || !field.empty() || !row.empty()) end_row();
  return rows;
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

}  // namespace

void TabularSchema::validate() const {
  if (feature_columns.empty())
    throw SchemaError("schema needs at least one feature column");
  if (target_column == sensitive_column)
    throw SchemaError("target and sensitive columns must be distinct: " +
                      target_column);
  std::set<std::string> names;
  for (const auto& fc : feature_columns) {
    if (fc.name == target_column || fc.name == sensitive_column)
      throw SchemaError("column used both as feature and label: " + fc.name);
    if (!names.insert(fc.name).second)
      throw SchemaError("duplicate feature column: " + fc.name);
  }
}

void Dataset::validate() const {
  const Index n = features.rows();
  if (target.size() != n || group.size() != n ||
      static_cast<Index>(ids.size()) != n)
    throw DimensionError("dataset vectors disagree on example count");
  if (!features.allFinite())
    throw NumericError("dataset features contain non-finite values");
  if (static_cast<Index>(feature_names.size()) != features.cols() ||
      static_cast<Index>(numeric_dim.size()) != features.cols())
    throw DimensionError("dataset feature metadata disagrees on width");
  std::unordered_set<std::int64_t> seen(ids.begin(), ids.end());
  if (static_cast<Index>(seen.size()) != n)
    throw SchemaError("dataset ids are not unique");
  for (Index i = 0; i < n; ++i) {
    if ((target[i] != 0 && target[i] != 1) || (group[i] != 0 && group[i] != 1))
      throw SchemaError("labels must be 0/1");
  }
}

Dataset Dataset::subset(std::span<const std::int64_t> keep_ids) const {
  std::unordered_map<std::int64_t, Index> pos;
  pos.reserve(ids.size());
  for (Index i = 0; i < static_cast<Index>(ids.size()); ++i) pos[ids[i]] = i;

  Dataset out;
  const Index m = static_cast<Index>(keep_ids.size());
  out.features.resize(m, features.cols());
  out.target.resize(m);
  out.group.resize(m);
  out.ids.reserve(m);
  for (Index i = 0; i < m; ++i) {
    auto it = pos.find(keep_ids[i]);
    if (it == pos.end())
      throw CapacityError("unknown example id " + std::to_string(keep_ids[i]));
    out.features.row(i) = features.row(it->second);
    out.target[i] = target[it->second];
    out.group[i] = group[it->second];
    out.ids.push_back(keep_ids[i]);
  }
  out.feature_names = feature_names;
  out.numeric_dim = numeric_dim;
  out.dropped_rows = dropped_rows;
  return out;
}

Matrix Dataset::one_hot_targets() const {
  Matrix y = Matrix::Zero(target.size(), 2);
  for (Index i = 0; i < target.size(); ++i) y(i, target[i]) = 1.0;
  return y;
}

void SkewConfig::validate() const {
  if (!(majority_fraction > 0.5 && majority_fraction < 1.0))
    throw ConfigError("majority_fraction must lie in (0.5, 1.0)");
  if (majority_group != 0 && majority_group != 1)
    throw ConfigError("majority_group must be 0 or 1");
  if (n_total <= 0) throw ConfigError("skew n_total must be positive");
}

void SynthConfig::validate() const {
  if (n_examples <= 0 || n_features <= 0)
    throw ConfigError("synthetic config needs positive sizes");
  if (cov_diag.size() != n_features || (cov_diag.array() <= 0.0).any())
    throw ConfigError("covariance diagonal entries must be positive");
  double total = 0.0;
  for (int g = 0; g < 2; ++g)
    for (int y = 0; y < 2; ++y) {
      if (cell_means[g][y].size() != n_features)
        throw ConfigError("cell mean width disagrees with n_features");
      if (cell_proportions[g][y] < 0.0)
        throw ConfigError("cell proportions must be non-negative");
      total += cell_proportions[g][y];
    }
  if (std::abs(total - 1.0) > 1e-9)
    throw ConfigError("cell proportions must sum to 1");
}

SynthConfig SynthConfig::biased_binary(Index n_examples, Index n_features,
                                       double class_gap, double group_gap) {
  if (n_features < 4)
    throw ConfigError("biased_binary layout needs at least 4 features");
  SynthConfig cfg;
  cfg.n_examples = n_examples;
  cfg.n_features = n_features;
  cfg.cov_diag = Vector::Ones(n_features);
  cfg.separability_gap = class_gap;

  // Both groups share the e_3 class component; e_0 correlates with the
  // target for group 0 and anti-correlates for group 1. A skew-trained model
  // weighs e_0 by the group balance, so its accuracy parity degrades smoothly
  // with the imposed imbalance.
  const double w = class_gap / (2.0 * std::sqrt(2.0));
  for (int g = 0; g < 2; ++g) {
    for (int y = 0; y < 2; ++y) {
      Vector mu = Vector::Zero(n_features);
      const double sign = (y == 1) ? 1.0 : -1.0;
      mu[0] += sign * w * (g == 0 ? 1.0 : -1.0);
      mu[3] += sign * w;
      if (g == 1) mu[2] += group_gap;
      cfg.cell_means[g][y] = mu;
    }
  }
  return cfg;
}

Dataset load_tabular(std::string_view csv_text, const TabularSchema& schema) {
  schema.validate();
  const auto rows = parse_csv(csv_text);
  if (rows.empty()) throw SchemaError("CSV has no header row");

  std::unordered_map<std::string, std::size_t> col_index;
  for (std::size_t i = 0; i < rows[0].size(); ++i)
    col_index[trim(rows[0][i])] = i;

  auto require = [&](const std::string& name) {
    auto it = col_index.find(name);
    if (it == col_index.end())
      throw SchemaError("missing column: " + name);
    return it->second;
  };

  std::vector<std::size_t> feature_idx;
  for (const auto& fc : schema.feature_columns)
    feature_idx.push_back(require(fc.name));
  const std::size_t target_idx = require(schema.target_column);
  const std::size_t sensitive_idx = require(schema.sensitive_column);

  // First pass: usable rows and categorical vocabularies.
  std::vector<std::size_t> usable;
  std::int64_t dropped = 0;
  std::vector<std::map<std::string, Index>> vocab(schema.feature_columns.size());
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::size_t width =
        std::max({target_idx, sensitive_idx,
                  feature_idx.empty() ? std::size_t{0}
                                      : *std::max_element(feature_idx.begin(),
                                                          feature_idx.end())}) +
        1;
    bool ok = row.size() >= width;
    if (ok) {
      for (std::size_t f = 0; f < feature_idx.size() && ok; ++f) {
        const std::string v = trim(row[feature_idx[f]]);
        if (is_missing(v)) {
          ok = false;
        } else if (schema.feature_columns[f].kind == ColumnKind::Numeric) {
          double x;
          ok = parse_double(v, x);
        }
      }
      if (ok && (is_missing(trim(row[target_idx])) ||
                 is_missing(trim(row[sensitive_idx]))))
        ok = false;
    }
    if (!ok) {
      ++dropped;
      continue;
    }
    usable.push_back(r);
    for (std::size_t f = 0; f < feature_idx.size(); ++f) {
      if (schema.feature_columns[f].kind == ColumnKind::Categorical) {
        const std::string v = trim(row[feature_idx[f]]);
        vocab[f].emplace(v, 0);
      }
    }
  }
  if (usable.empty())
    throw EmptyDatasetError("no usable rows after dropping " +
                            std::to_string(dropped) + " incomplete rows");

  // Column layout: numeric dims pass through, categorical expand one dim per
  // distinct value in sorted order.
  std::vector<std::string> names;
  std::vector<bool> numeric;
  std::vector<Index> offsets(schema.feature_columns.size());
  Index width = 0;
  for (std::size_t f = 0; f < schema.feature_columns.size(); ++f) {
    offsets[f] = width;
    const auto& fc = schema.feature_columns[f];
    if (fc.kind == ColumnKind::Numeric) {
      names.push_back(fc.name);
      numeric.push_back(true);
      ++width;
    } else {
      for (auto& [value, dim] : vocab[f]) {
        dim = width++;
        names.push_back(fc.name + "=" + value);
        numeric.push_back(false);
      }
    }
  }

  Dataset ds;
  ds.features = Matrix::Zero(static_cast<Index>(usable.size()), width);
  ds.target.resize(static_cast<Index>(usable.size()));
  ds.group.resize(static_cast<Index>(usable.size()));
  ds.feature_names = std::move(names);
  ds.numeric_dim = std::move(numeric);
  ds.dropped_rows = dropped;
  for (Index i = 0; i < static_cast<Index>(usable.size()); ++i) {
    const auto& row = rows[usable[i]];
    for (std::size_t f = 0; f < feature_idx.size(); ++f) {
      const std::string v = trim(row[feature_idx[f]]);
      if (schema.feature_columns[f].kind == ColumnKind::Numeric) {
        double x = 0.0;
        parse_double(v, x);
        ds.features(i, offsets[f]) = x;
      } else {
        ds.features(i, vocab[f].at(v)) = 1.0;
      }
    }
    ds.target[i] =
        trim(row[target_idx]) == schema.target_positive_value ? 1 : 0;
    ds.group[i] =
        trim(row[sensitive_idx]) == schema.sensitive_s1_value ? 1 : 0;
    ds.ids.push_back(static_cast<std::int64_t>(usable[i]) - 1);  // data-row index
  }
  ds.validate();
  return ds;
}

Dataset synth_generate(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  // Largest-remainder apportionment of n over the four cells.
  std::array<std::array<Index, 2>, 2> counts{};
  std::vector<std::tuple<double, int, int>> rema;
  Index assigned = 0;
  for (int g = 0; g < 2; ++g)
    for (int y = 0; y < 2; ++y) {
      const double exact = cfg.cell_proportions[g][y] * cfg.n_examples;
      counts[g][y] = static_cast<Index>(std::floor(exact));
      assigned += counts[g][y];
      rema.emplace_back(exact - std::floor(exact), g, y);
    }
  std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    return std::tie(std::get<1>(a), std::get<2>(a)) <
           std::tie(std::get<1>(b), std::get<2>(b));
  });
  for (std::size_t k = 0; assigned < cfg.n_examples; ++k, ++assigned)
    ++counts[std::get<1>(rema[k])][std::get<2>(rema[k])];

  Dataset ds;
  ds.features.resize(cfg.n_examples, cfg.n_features);
  ds.target.resize(cfg.n_examples);
  ds.group.resize(cfg.n_examples);
  ds.ids.reserve(cfg.n_examples);
  for (Index d = 0; d < cfg.n_features; ++d)
    ds.feature_names.push_back("f" + std::to_string(d));
  ds.numeric_dim.assign(cfg.n_features, true);

  Rng rng(seed);
  const Vector stdev = cfg.cov_diag.array().sqrt();
  Index row = 0;
  for (int g = 0; g < 2; ++g)
    for (int y = 0; y < 2; ++y)
      for (Index k = 0; k < counts[g][y]; ++k, ++row) {
        for (Index d = 0; d < cfg.n_features; ++d)
          ds.features(row, d) = cfg.cell_means[g][y][d] + stdev[d] * rng.normal();
        ds.target[row] = y;
        ds.group[row] = g;
        ds.ids.push_back(row);
      }
  ds.validate();
  return ds;
}

Dataset skew_sample(const Dataset& ds, const SkewConfig& cfg,
                    std::uint64_t seed) {
  cfg.validate();
  const Index n = cfg.n_total;
  const int maj = cfg.majority_group;
  const Index n_maj = static_cast<Index>(std::llround(cfg.majority_fraction * n));
  const Index n_pos = n / 2;

  // Cell targets: majority split evenly over classes, the class marginal
  // balanced by the minority cells.
  std::array<std::array<Index, 2>, 2> want{};
  want[maj][1] = n_maj / 2;
  want[maj][0] = n_maj - want[maj][1];
  want[1 - maj][1] = n_pos - want[maj][1];
  want[1 - maj][0] = (n - n_maj) - want[1 - maj][1];

  std::array<std::array<std::vector<Index>, 2>, 2> cells;
  for (Index i = 0; i < ds.n_examples(); ++i)
    cells[ds.group[i]][ds.target[i]].push_back(i);

  for (int g = 0; g < 2; ++g)
    for (int y = 0; y < 2; ++y) {
      if (want[g][y] < 0)
        throw ConfigError("skew request is internally inconsistent");
      if (static_cast<Index>(cells[g][y].size()) < want[g][y])
        throw CapacityError(
            "cell (group=" + std::to_string(g) + ", target=" +
            std::to_string(y) + ") needs " + std::to_string(want[g][y]) +
            " examples but only " + std::to_string(cells[g][y].size()) +
            " are available");
    }

  Rng rng(seed);
  std::vector<std::int64_t> picked;
  picked.reserve(n);
  for (int g = 0; g < 2; ++g)
    for (int y = 0; y < 2; ++y) {
      auto& pool = cells[g][y];
      rng.shuffle(pool);
      for (Index k = 0; k < want[g][y]; ++k) picked.push_back(ds.ids[pool[k]]);
    }
  rng.shuffle(picked);
  return ds.subset(picked);
}

AuditSplit split_audit(const Dataset& ds, double shadow_fraction,
                       std::uint64_t seed, bool shadow_overlaps_audit) {
  if (!(shadow_fraction >= 0.0 && shadow_fraction < 1.0))
    throw ConfigError("shadow_fraction must lie in [0, 1)");
  const Index n = ds.n_examples();
  const Index n_shadow = static_cast<Index>(std::floor(shadow_fraction * n));
  const Index m = (n - n_shadow) / 2;
  if (m < 1 || (shadow_fraction > 0.0 && n_shadow < 1))
    throw CapacityError("dataset too small to split: n=" + std::to_string(n));

  std::vector<std::int64_t> shuffled = ds.ids;
  Rng rng(seed);
  rng.shuffle(shuffled);

  AuditSplit split;
  split.rng_seed = seed;
  split.member_ids.assign(shuffled.begin(), shuffled.begin() + m);
  split.nonmember_ids.assign(shuffled.begin() + m, shuffled.begin() + 2 * m);
  if (shadow_overlaps_audit) {
    split.shadow_pool_ids = ds.ids;
  } else {
    split.shadow_pool_ids.assign(shuffled.begin() + 2 * m,
                                 shuffled.begin() + 2 * m + n_shadow);
  }
  return split;
}

Standardizer fit_standardizer(const Dataset& ds,
                              std::span<const std::int64_t> member_ids) {
  const Dataset members = ds.subset(member_ids);
  const Index d = ds.n_features();
  Standardizer st;
  st.mean = Vector::Zero(d);
  st.scale = Vector::Ones(d);
  const double n = static_cast<double>(members.n_examples());
  for (Index j = 0; j < d; ++j) {
    if (!ds.numeric_dim[j]) continue;
    const double mu = members.features.col(j).mean();
    const double var =
        (members.features.col(j).array() - mu).square().sum() / n;
    st.mean[j] = mu;
    st.scale[j] = std::sqrt(var) > 1e-12 ? std::sqrt(var) : 1.0;
  }
  return st;
}

Dataset apply_standardizer(const Dataset& ds, const Standardizer& st) {
  if (st.mean.size() != ds.n_features())
    throw DimensionError("standardizer width disagrees with dataset");
  Dataset out = ds;
  for (Index j = 0; j < ds.n_features(); ++j)
    out.features.col(j) =
        (ds.features.col(j).array() - st.mean[j]) / st.scale[j];
  return out;
}

}  // namespace fairaudit
