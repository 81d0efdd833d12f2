#include "fairaudit/tinynn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fairaudit/errors.hpp"

namespace fairaudit {

namespace {

constexpr double kLogFloor = 1e-12;

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - m).exp();
    p.row(i) = e / e.sum();
  }
  return p;
}

Matrix one_hot(const IntVector& labels) {
  Matrix y = Matrix::Zero(labels.size(), 2);
  for (Index i = 0; i < labels.size(); ++i) y(i, labels[i]) = 1.0;
  return y;
}

double weighted_ce(const Matrix& probs, const Matrix& soft_targets,
                   const Vector& weights) {
  const Index n = probs.rows();
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    double ce = 0.0;
    for (Index c = 0; c < probs.cols(); ++c)
      ce -= soft_targets(i, c) * std::log(std::max(probs(i, c), kLogFloor));
    total += (weights.size() ? weights[i] : 1.0) * ce;
  }
  return total / static_cast<double>(n);
}

}  // namespace

Mlp Mlp::make(Index input_dim, const std::vector<Index>& hidden,
              bool attr_head, std::uint64_t seed) {
  if (input_dim < 1) throw DimensionError("input_dim must be positive");
  Rng rng(seed);
  Mlp m;
  std::vector<Index> dims;
  dims.push_back(input_dim);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(2);
  auto init_layer = [&](Index fan_out, Index fan_in, Matrix& w, Vector& b) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    w.resize(fan_out, fan_in);
    for (Index r = 0; r < fan_out; ++r)
      for (Index c = 0; c < fan_in; ++c) w(r, c) = rng.uniform(-a, a);
    b = Vector::Zero(fan_out);
  };
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Matrix w;
    Vector b;
    init_layer(dims[l + 1], dims[l], w, b);
    m.weights.push_back(std::move(w));
    m.biases.push_back(std::move(b));
  }
  if (attr_head) {
    const Index backbone = dims.size() >= 3 ? dims[dims.size() - 2] : input_dim;
    m.has_attr_head = true;
    init_layer(2, backbone, m.attr_weight, m.attr_bias);
  }
  m.validate();
  return m;
}

Index Mlp::n_parameters() const {
  Index n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l)
    n += weights[l].size() + biases[l].size();
  if (has_attr_head) n += attr_weight.size() + attr_bias.size();
  return n;
}

void Mlp::validate() const {
  if (weights.empty() || weights.size() != biases.size())
    throw DimensionError("model has no layers or mismatched weight/bias lists");
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (biases[l].size() != weights[l].rows())
      throw DimensionError("bias width disagrees with layer " + std::to_string(l));
    if (l + 1 < weights.size() && weights[l + 1].cols() != weights[l].rows())
      throw DimensionError("layer shapes do not chain at layer " +
                           std::to_string(l));
    if (!weights[l].allFinite() || !biases[l].allFinite())
      throw NumericError("non-finite parameters in layer " + std::to_string(l));
  }
  if (weights.back().rows() != 2)
    throw DimensionError("output layer must have two logits");
  if (has_attr_head) {
    const Index backbone =
        weights.size() >= 2 ? weights.back().cols() : input_dim();
    if (attr_weight.rows() != 2 || attr_weight.cols() != backbone ||
        attr_bias.size() != 2)
      throw DimensionError("attribute head shape disagrees with backbone");
    if (!attr_weight.allFinite() || !attr_bias.allFinite())
      throw NumericError("non-finite parameters in attribute head");
  }
}

ForwardCache forward_cached(const Mlp& model, const Matrix& features) {
  if (features.cols() != model.input_dim())
    throw DimensionError("feature width " + std::to_string(features.cols()) +
                         " does not match model input " +
                         std::to_string(model.input_dim()));
  ForwardCache cache;
  cache.activations.reserve(model.weights.size());
  cache.activations.push_back(features);
  Matrix a = features;
  for (std::size_t l = 0; l + 1 < model.weights.size(); ++l) {
    a = ((a * model.weights[l].transpose()).rowwise() +
         model.biases[l].transpose())
            .cwiseMax(0.0);
    cache.activations.push_back(a);
  }
  cache.logits = (a * model.weights.back().transpose()).rowwise() +
                 model.biases.back().transpose();
  cache.probs = softmax_rows(cache.logits);
  if (model.has_attr_head) {
    cache.attr_logits = (cache.activations.back() *
                         model.attr_weight.transpose())
                            .rowwise() +
                        model.attr_bias.transpose();
    cache.attr_probs = softmax_rows(cache.attr_logits);
  }
  return cache;
}

PredScores forward(const Mlp& model, const Matrix& features) {
  const ForwardCache cache = forward_cached(model, features);
  PredScores s;
  s.p_pos = cache.probs.col(1);
  s.label.resize(s.p_pos.size());
  for (Index i = 0; i < s.p_pos.size(); ++i) s.label[i] = s.p_pos[i] > 0.5 ? 1 : 0;
  return s;
}

Gradients Gradients::zeros_like(const Mlp& model) {
  Gradients g;
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    g.weights.emplace_back(Matrix::Zero(model.weights[l].rows(),
                                        model.weights[l].cols()));
    g.biases.emplace_back(Vector::Zero(model.biases[l].size()));
  }
  if (model.has_attr_head) {
    g.attr_weight = Matrix::Zero(model.attr_weight.rows(), model.attr_weight.cols());
    g.attr_bias = Vector::Zero(model.attr_bias.size());
  }
  return g;
}

double Gradients::squared_norm() const {
  double s = 0.0;
  for (const auto& w : weights) s += w.squaredNorm();
  for (const auto& b : biases) s += b.squaredNorm();
  s += attr_weight.squaredNorm() + attr_bias.squaredNorm();
  return s;
}

void Gradients::add_scaled(const Gradients& other, double factor) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] += factor * other.weights[l];
    biases[l] += factor * other.biases[l];
  }
  if (attr_weight.size()) {
    attr_weight += factor * other.attr_weight;
    attr_bias += factor * other.attr_bias;
  }
}

void Gradients::scale(double factor) {
  for (auto& w : weights) w *= factor;
  for (auto& b : biases) b *= factor;
  attr_weight *= factor;
  attr_bias *= factor;
}

BackwardResult backward(const Mlp& model, const ForwardCache& cache,
                        const Matrix& soft_targets,
                        const BackwardOptions& opts) {
  const Index n = cache.probs.rows();
  if (soft_targets.rows() != n || soft_targets.cols() != 2)
    throw DimensionError("soft targets must be n x 2");
  if (opts.example_weights.size() && opts.example_weights.size() != n)
    throw DimensionError("example weights length mismatch");

  BackwardResult result;
  result.grads = Gradients::zeros_like(model);
  result.loss = opts.include_target_loss
                    ? weighted_ce(cache.probs, soft_targets, opts.example_weights)
                    : 0.0;
  if (!std::isfinite(result.loss))
    throw NumericError("non-finite loss in batch " +
                       std::to_string(opts.batch_index));

  const double inv_n = 1.0 / static_cast<double>(n);
  Matrix dlogits = Matrix::Zero(n, 2);
  if (opts.include_target_loss) {
    dlogits = cache.probs - soft_targets;
    for (Index i = 0; i < n; ++i)
      dlogits.row(i) *=
          inv_n * (opts.example_weights.size() ? opts.example_weights[i] : 1.0);
  }
  if (opts.p_pos_grad) {
    if (opts.p_pos_grad->size() != n)
      throw DimensionError("p_pos gradient length mismatch");
    // Chain through the two-way softmax: dp1/dz1 = p1 p0 = -dp1/dz0.
    for (Index i = 0; i < n; ++i) {
      const double j = cache.probs(i, 1) * cache.probs(i, 0);
      const double g = opts.p_pos_grad_scale * (*opts.p_pos_grad)[i] * j;
      dlogits(i, 1) += g;
      dlogits(i, 0) -= g;
    }
  }

  // Output layer, then walk back through the hidden stack.
  const Matrix& a_last = cache.activations.back();
  result.grads.weights.back() = dlogits.transpose() * a_last;
  result.grads.biases.back() = dlogits.colwise().sum();
  Matrix delta = dlogits * model.weights.back();  // n x last_hidden

  // Attribute head with gradient reversal at the junction.
  const bool attr_active =
      model.has_attr_head && (opts.train_attr_head || opts.lambda_adv != 0.0);
  if (attr_active) {
    if (!opts.groups)
      throw DimensionError("attribute path requested without group labels");
    const Matrix gy = one_hot(*opts.groups);
    Matrix dattr = cache.attr_probs - gy;
    for (Index i = 0; i < n; ++i)
      dattr.row(i) *=
          inv_n * (opts.example_weights.size() ? opts.example_weights[i] : 1.0);
    result.grads.attr_weight = dattr.transpose() * a_last;
    result.grads.attr_bias = dattr.colwise().sum();
    if (opts.lambda_adv != 0.0)
      delta -= opts.lambda_adv * (dattr * model.attr_weight);
  }

  for (Index l = model.n_layers() - 2; l >= 0; --l) {
    const Matrix& a = cache.activations[l + 1];  // post-ReLU output of layer l
    delta = delta.cwiseProduct((a.array() > 0.0).cast<double>().matrix());
    result.grads.weights[l] = delta.transpose() * cache.activations[l];
    result.grads.biases[l] = delta.colwise().sum();
    if (l > 0) delta = delta * model.weights[l];
  }
  return result;
}

double loss_only(const Mlp& model, const Matrix& features,
                 const Matrix& soft_targets, const Vector& example_weights,
                 Objective objective, const IntVector* groups) {
  const ForwardCache cache = forward_cached(model, features);
  if (objective == Objective::TargetLoss)
    return weighted_ce(cache.probs, soft_targets, example_weights);
  if (!model.has_attr_head || !groups)
    throw DimensionError("attribute loss needs a head and group labels");
  return weighted_ce(cache.attr_probs, one_hot(*groups), example_weights);
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw ConfigError("momentum must lie in [0, 1)");
  if (l2 < 0.0) throw ConfigError("l2 must be non-negative");
}

namespace {

/// One-row slice of a batch cache, for per-example gradients.
ForwardCache slice_cache(const ForwardCache& cache, Index i) {
  ForwardCache s;
  for (const auto& a : cache.activations) s.activations.push_back(a.row(i));
  s.logits = cache.logits.row(i);
  s.probs = cache.probs.row(i);
  if (cache.attr_logits.size()) {
    s.attr_logits = cache.attr_logits.row(i);
    s.attr_probs = cache.attr_probs.row(i);
  }
  return s;
}

}  // namespace

TrainResult train(Mlp& model, const Matrix& features, const IntVector& target,
                  const IntVector& group, const TrainConfig& cfg,
                  const TrainHooks* hooks) {
  cfg.validate();
  const Index n = features.rows();
  if (target.size() != n || group.size() != n)
    throw DimensionError("training labels disagree with feature rows");
  if (cfg.per_example_weights.size() && cfg.per_example_weights.size() != n)
    throw DimensionError("per-example weight length mismatch");

  TrainResult result;
  Gradients velocity = Gradients::zeros_like(model);
  const Matrix y_soft_all = one_hot(target);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, "epoch", static_cast<std::uint64_t>(epoch)));
    std::vector<Index> order;
    if (hooks && hooks->epoch_indices) {
      order = hooks->epoch_indices(epoch, rng);
    } else {
      order.resize(n);
      std::iota(order.begin(), order.end(), Index{0});
      rng.shuffle(order);
    }

    double epoch_loss = 0.0;
    Index seen = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const Index b = static_cast<Index>(stop - start);
      const int batch_index = static_cast<int>(start / cfg.batch_size);

      Matrix bx(b, features.cols());
      Matrix by(b, 2);
      IntVector byi(b), bg(b);
      Vector bw(b);
      for (Index k = 0; k < b; ++k) {
        const Index i = order[start + k];
        bx.row(k) = features.row(i);
        by.row(k) = y_soft_all.row(i);
        byi[k] = target[i];
        bg[k] = group[i];
        bw[k] = cfg.per_example_weights.size() ? cfg.per_example_weights[i] : 1.0;
      }
      if (hooks && hooks->batch_transform)
        hooks->batch_transform(bx, by, bg, bw, rng);

      ForwardCache cache = forward_cached(model, bx);

      Vector penalty_grad;
      double penalty_value = 0.0;
      if (hooks && hooks->prob_penalty) {
        penalty_grad =
            hooks->prob_penalty(cache.probs.col(1), byi, bg, penalty_value);
      }

      BackwardOptions opts;
      opts.example_weights = bw;
      opts.batch_index = batch_index;
      if (hooks) {
        opts.lambda_adv = hooks->lambda_adv;
        opts.train_attr_head = hooks->train_attr_head;
        if (opts.lambda_adv != 0.0 || opts.train_attr_head) opts.groups = &bg;
        if (penalty_grad.size()) {
          opts.p_pos_grad = &penalty_grad;
          opts.p_pos_grad_scale = hooks->penalty_scale;
        }
      }

      Gradients step_grad;
      double batch_loss = 0.0;
      const Index bn = cache.probs.rows();  // transforms may resize the batch
      auto run_backward = [&] {
        if (hooks && hooks->grad_aggregator) {
          std::vector<Gradients> per_example;
          per_example.reserve(bn);
          for (Index i = 0; i < bn; ++i) {
            ForwardCache one = slice_cache(cache, i);
            BackwardOptions o1 = opts;
            Vector w1(1);
            w1[0] = i < bw.size() ? bw[i] : 1.0;
            o1.example_weights = w1;
            IntVector g1(1);
            g1[0] = i < bg.size() ? bg[i] : 0;
            if (opts.groups) o1.groups = &g1;
            Vector p1(1);
            if (opts.p_pos_grad) {
              p1[0] = (*opts.p_pos_grad)[i];
              o1.p_pos_grad = &p1;
              o1.p_pos_grad_scale =
                  opts.p_pos_grad_scale * static_cast<double>(bn);
            }
            BackwardResult r = backward(model, one, by.row(i), o1);
            batch_loss += r.loss / static_cast<double>(bn);
            per_example.push_back(std::move(r.grads));
          }
          step_grad = hooks->grad_aggregator(per_example, rng);
        } else {
          BackwardResult r = backward(model, cache, by, opts);
          step_grad = std::move(r.grads);
          batch_loss = r.loss;
        }
      };
      try {
        run_backward();
      } catch (const NumericError& e) {
        throw TrainingError("training diverged at epoch " +
                            std::to_string(epoch) + ": " + e.what());
      }
      batch_loss += (hooks ? hooks->penalty_scale : 0.0) * penalty_value;
      if (!std::isfinite(batch_loss))
        throw TrainingError("training diverged at epoch " +
                            std::to_string(epoch));

      if (cfg.l2 > 0.0) {
        for (Index l = 0; l < model.n_layers(); ++l)
          step_grad.weights[l] += cfg.l2 * model.weights[l];
        if (model.has_attr_head && step_grad.attr_weight.size())
          step_grad.attr_weight += cfg.l2 * model.attr_weight;
      }

      // Heavy-ball momentum.
      velocity.scale(cfg.momentum);
      velocity.add_scaled(step_grad, 1.0);
      for (Index l = 0; l < model.n_layers(); ++l) {
        model.weights[l] -= cfg.learning_rate * velocity.weights[l];
        model.biases[l] -= cfg.learning_rate * velocity.biases[l];
      }
      if (model.has_attr_head && velocity.attr_weight.size()) {
        model.attr_weight -= cfg.learning_rate * velocity.attr_weight;
        model.attr_bias -= cfg.learning_rate * velocity.attr_bias;
      }

      epoch_loss += batch_loss * static_cast<double>(bn);
      seen += bn;
    }
    if (!model.weights.front().allFinite())
      throw TrainingError("training diverged at epoch " + std::to_string(epoch));
    result.loss_history.push_back(seen ? epoch_loss / static_cast<double>(seen)
                                       : 0.0);
  }
  return result;
}

double grad_check(const Mlp& model, const Matrix& features,
                  const Matrix& soft_targets, const Vector& example_weights,
                  double h) {
  BackwardOptions opts;
  opts.example_weights = example_weights;
  const ForwardCache cache = forward_cached(model, features);
  const Gradients analytic = backward(model, cache, soft_targets, opts).grads;

  Mlp probe = model;
  double worst = 0.0;
  auto fd = [&](double& param, double ana) {
    const double saved = param;
    param = saved + h;
    const double up = loss_only(probe, features, soft_targets, example_weights,
                                Objective::TargetLoss);
    param = saved - h;
    const double dn = loss_only(probe, features, soft_targets, example_weights,
                                Objective::TargetLoss);
    param = saved;
    const double num = (up - dn) / (2.0 * h);
    const double rel =
        std::abs(ana - num) / std::max({1.0, std::abs(ana), std::abs(num)});
    worst = std::max(worst, rel);
  };
  for (Index l = 0; l < probe.n_layers(); ++l) {
    for (Index r = 0; r < probe.weights[l].rows(); ++r)
      for (Index c = 0; c < probe.weights[l].cols(); ++c)
        fd(probe.weights[l](r, c), analytic.weights[l](r, c));
    for (Index r = 0; r < probe.biases[l].size(); ++r)
      fd(probe.biases[l](r), analytic.biases[l](r));
  }
  return worst;
}

double grad_check_random(std::uint64_t seed) {
  Rng rng(seed);
  const Index input = 2 + static_cast<Index>(rng.uniform_int(5));
  std::vector<Index> hidden;
  const int depth = 1 + static_cast<int>(rng.uniform_int(2));
  for (int l = 0; l < depth; ++l)
    hidden.push_back(2 + static_cast<Index>(rng.uniform_int(7)));
  const Index n = 3 + static_cast<Index>(rng.uniform_int(6));
  Mlp model = Mlp::make(input, hidden, false, rng.next_u64());
  // Positive hidden biases keep dead inputs off the exact kink: a row whose
  // previous layer went fully inactive would otherwise sit at z = 0.
  for (Index l = 0; l + 1 < model.n_layers(); ++l)
    for (Index r = 0; r < model.biases[l].size(); ++r)
      model.biases[l][r] = rng.uniform(0.05, 0.15);

  // Keep pre-activations away from the ReLU kink so central differences do
  // not straddle it.
  Matrix x(n, input);
  for (int attempt = 0; attempt < 100; ++attempt) {
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < input; ++j) x(i, j) = rng.normal();
    Matrix a = x;
    double closest = 1e9;
    for (Index l = 0; l + 1 < model.n_layers(); ++l) {
      const Matrix z = (a * model.weights[l].transpose()).rowwise() +
                       model.biases[l].transpose();
      closest = std::min(closest, z.array().abs().minCoeff());
      a = z.cwiseMax(0.0);
    }
    if (closest > 1e-3) break;
  }

  IntVector y(n);
  Vector w(n);
  for (Index i = 0; i < n; ++i) {
    y[i] = static_cast<int>(rng.uniform_int(2));
    w[i] = 0.25 + rng.uniform();
  }
  return grad_check(model, x, one_hot(y), w);
}

nlohmann::json mlp_to_json(const Mlp& model) {
  nlohmann::json j;
  j["arch_tag"] = model.arch_tag;
  std::vector<Index> dims;
  dims.push_back(model.input_dim());
  for (const auto& w : model.weights) dims.push_back(w.rows());
  j["dims"] = dims;
  auto flatten = [](const Matrix& m) {
    std::vector<double> v;
    v.reserve(m.size());
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) v.push_back(m(r, c));
    return v;
  };
  nlohmann::json weights = nlohmann::json::array();
  nlohmann::json biases = nlohmann::json::array();
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    weights.push_back(flatten(model.weights[l]));
    biases.push_back(std::vector<double>(model.biases[l].data(),
                                         model.biases[l].data() +
                                             model.biases[l].size()));
  }
  j["weights"] = std::move(weights);
  j["biases"] = std::move(biases);
  if (model.has_attr_head) {
    j["attr_head"] = {{"weight", flatten(model.attr_weight)},
                      {"bias", std::vector<double>(model.attr_bias.data(),
                                                   model.attr_bias.data() + 2)}};
  }
  return j;
}

Mlp mlp_from_json(const nlohmann::json& j) {
  Mlp m;
  m.arch_tag = j.at("arch_tag").get<std::string>();
  const auto dims = j.at("dims").get<std::vector<Index>>();
  if (dims.size() < 2) throw SchemaError("model json needs at least two dims");
  auto unflatten = [](const std::vector<double>& v, Index rows, Index cols) {
    if (static_cast<Index>(v.size()) != rows * cols)
      throw SchemaError("model json weight size mismatch");
    Matrix out(rows, cols);
    Index k = 0;
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) out(r, c) = v[k++];
    return out;
  };
  const auto& weights = j.at("weights");
  const auto& biases = j.at("biases");
  if (weights.size() != dims.size() - 1 || biases.size() != dims.size() - 1)
    throw SchemaError("model json layer count mismatch");
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    m.weights.push_back(unflatten(weights[l].get<std::vector<double>>(),
                                  dims[l + 1], dims[l]));
    const auto b = biases[l].get<std::vector<double>>();
    if (static_cast<Index>(b.size()) != dims[l + 1])
      throw SchemaError("model json bias size mismatch");
    m.biases.push_back(Eigen::Map<const Vector>(b.data(), b.size()));
  }
  if (j.contains("attr_head")) {
    m.has_attr_head = true;
    const Index backbone = dims.size() >= 3 ? dims[dims.size() - 2] : dims[0];
    m.attr_weight = unflatten(
        j["attr_head"].at("weight").get<std::vector<double>>(), 2, backbone);
    const auto b = j["attr_head"].at("bias").get<std::vector<double>>();
    if (b.size() != 2) throw SchemaError("attribute head bias must have 2 entries");
    m.attr_bias = Eigen::Map<const Vector>(b.data(), 2);
  }
  m.validate();
  return m;
}

}  // namespace fairaudit
