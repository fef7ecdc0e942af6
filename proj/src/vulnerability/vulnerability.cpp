// SPDX-License-Identifier: Apache-2.0
#include "vulnerability/vulnerability.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "common/error.hpp"
#include "common/rng.hpp"
#include "nn/loss.hpp"
#include "nn/objective.hpp"
#include "tensor/ops.hpp"

namespace mtr::vuln {

namespace {

std::vector<std::size_t> iota_range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return idx;
}

}  // namespace

std::vector<std::size_t> sample_pixels(std::size_t n, std::size_t k, Rng& rng) {
  if (k > n) throw InvalidArgument("cannot sample more pixels than the output has");
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

namespace {

void check_matrix(std::span<const double> c, std::size_t m) {
  if (m < 1) throw InvalidArgument("covariance matrix must have at least one task");
  if (c.size() != m * m) throw ShapeError("covariance matrix must be M x M");
  for (std::size_t i = 0; i < m; ++i) {
    if (!(c[i * m + i] > 0.0)) throw InvalidArgument("covariance diagonal must be positive");
    for (std::size_t j = 0; j < i; ++j) {
      const double a = c[i * m + j];
      const double b = c[j * m + i];
      if (std::abs(a - b) > 1e-9 * std::max({1.0, std::abs(a), std::abs(b)})) {
        throw InvalidArgument("covariance matrix must be symmetric");
      }
    }
  }
}

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) r[order[t]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

void CompensatedSum::add(double v) {
  const double t = sum_ + v;
  if (std::abs(sum_) >= std::abs(v)) {
    comp_ += (sum_ - t) + v;
  } else {
    comp_ += (v - t) + sum_;
  }
  sum_ = t;
}

double DualNormSpec::q() const {
  validate();
  if (std::isinf(p)) return 1.0;
  return p / (p - 1.0);
}

void DualNormSpec::validate() const {
  if (!(p > 1.0)) throw InvalidArgument("norm order p must exceed 1");
}

double lp_norm(std::span<const double> v, double p) {
  if (!(p >= 1.0)) throw InvalidArgument("norm order must be at least 1");
  if (std::isinf(p)) return linf_norm(v);
  if (p == 1.0) return l1_norm(v);
  if (p == 2.0) return l2_norm(v);
  double s = 0.0;
  for (double x : v) s += std::pow(std::abs(x), p);
  return std::pow(s, 1.0 / p);
}

double first_order_vulnerability(std::span<const LossPoint> sample, std::optional<double> radius,
                                 const DualNormSpec& norm) {
  if (sample.empty()) throw InvalidArgument("first_order_vulnerability: empty sample");
  if (radius && !(*radius >= 0.0)) throw InvalidArgument("radius must be nonnegative");
  const double q = norm.q();
  CompensatedSum total;
  for (const LossPoint& pt : sample) total.add(lp_norm(ad::grad_wrt_input(pt.loss, pt.x).data(), q));
  const double factor = total.value() / static_cast<double>(sample.size());
  return radius ? factor * *radius : factor;
}

double empirical_delta_loss(const ad::InputLoss& loss, const Tensor& x, double radius, const DualNormSpec& norm,
                            std::size_t trials, std::uint64_t seed) {
  norm.validate();
  if (trials < 1) throw InvalidArgument("empirical_delta_loss: trials must be at least 1");
  if (!(radius >= 0.0)) throw InvalidArgument("radius must be nonnegative");
  if (!std::isinf(norm.p) && norm.p != 2.0) throw InvalidArgument("empirical_delta_loss supports p = 2 and p = inf");
  if (radius == 0.0) return 0.0;
  const ad::ValueAndGrad base = ad::value_and_grad_wrt_input(loss, x);
  const std::size_t n = x.numel();
  double best = 0.0;
  auto consider = [&](const Tensor& delta) {
    Tensor y = x;
    auto yv = y.data();
    auto dv = delta.data();
    for (std::size_t i = 0; i < n; ++i) yv[i] += dv[i];
    const double v = ad::evaluate_loss(loss, y);
    if (!std::isfinite(v)) throw NumericError("empirical_delta_loss: non-finite loss");
    best = std::max(best, std::abs(v - base.value));
  };

  Tensor corner(x.shape(), 0.0);
  auto cv = corner.data();
  auto gv = base.grad.data();
  if (std::isinf(norm.p)) {
    for (std::size_t i = 0; i < n; ++i) cv[i] = gv[i] > 0.0 ? radius : (gv[i] < 0.0 ? -radius : 0.0);
  } else {
    const double g2 = l2_norm(gv);
    if (g2 > 0.0) {
      for (std::size_t i = 0; i < n; ++i) cv[i] = radius * gv[i] / g2;
    }
  }
  consider(corner);
  for (double& v : cv) v = -v;
  consider(corner);

  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor delta(x.shape(), 0.0);
  auto dv = delta.data();
  for (std::size_t t = 0; t < trials; ++t) {
    if (std::isinf(norm.p)) {
      for (double& v : dv) v = radius * (2.0 * unit(rng) - 1.0);
    } else {
      for (double& v : dv) v = normal(rng);
      const double len = l2_norm(dv);
      const double r = radius * std::pow(unit(rng), 1.0 / static_cast<double>(n));
      for (double& v : dv) v = len > 0.0 ? v * r / len : 0.0;
    }
    consider(delta);
  }
  return best;
}

Tensor joint_gradient(std::span<const Tensor> gradients) {
  if (gradients.empty()) throw InvalidArgument("joint_gradient: empty gradient list");
  Tensor out(gradients[0].shape(), 0.0);
  auto o = out.data();
  for (const Tensor& g : gradients) {
    if (g.shape() != out.shape()) throw ShapeError("joint_gradient: gradients have different shapes");
    auto v = g.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += v[i];
  }
  const double inv = 1.0 / static_cast<double>(gradients.size());
  for (double& v : o) v *= inv;
  return out;
}

std::vector<Tensor> per_task_gradients(const nn::SharedBackboneModel& model, const Tensor& x,
                                       const data::TargetMap& targets, const std::vector<std::string>& tasks,
                                       double loss_scale) {
  if (tasks.empty()) throw InvalidArgument("per_task_gradients: no tasks");
  std::vector<Tensor> out;
  for (const std::string& name : tasks) {
    auto it = targets.find(name);
    if (it == targets.end()) throw InvalidArgument("no target for task '" + name + "'");
    const Tensor& target = it->second;
    const ad::InputLoss loss = [&](ad::Tape& tape, const ad::Var& xv) {
      return ad::scale(nn::task_loss(model, tape, xv, target, name), loss_scale);
    };
    out.push_back(ad::grad_wrt_input(loss, x));
  }
  return out;
}

std::vector<std::vector<std::vector<double>>> per_example_gradients(const nn::SharedBackboneModel& model,
                                                                     const data::Dataset& dataset,
                                                                     const std::vector<std::string>& tasks,
                                                                     double loss_scale, std::size_t chunk) {
  if (dataset.size() == 0) throw InvalidArgument("per_example_gradients: empty sample");
  if (chunk < 1) throw InvalidArgument("chunk size must be positive");
  std::vector<std::vector<std::vector<double>>> out(tasks.size());
  const std::size_t n = dataset.size();
  for (std::size_t b = 0; b < n; b += chunk) {
    const auto idx = iota_range(b, std::min(n, b + chunk));
    const data::Batch batch = dataset.batch(idx);
    // The chunk loss averages over rows; undo that so each row carries its
    // own example's gradient.
    const double s = loss_scale * static_cast<double>(idx.size());
    const auto grads = per_task_gradients(model, batch.images, batch.targets, tasks, s);
    const std::size_t per_row = batch.images.numel() / idx.size();
    for (std::size_t c = 0; c < tasks.size(); ++c) {
      auto g = grads[c].data();
      for (std::size_t r = 0; r < idx.size(); ++r) {
        out[c].emplace_back(g.begin() + static_cast<std::ptrdiff_t>(r * per_row),
                            g.begin() + static_cast<std::ptrdiff_t>((r + 1) * per_row));
      }
    }
  }
  return out;
}

CovarianceEstimate gradient_covariance(const std::vector<std::vector<std::vector<double>>>& grads) {
  const std::size_t m = grads.size();
  if (m == 0) throw InvalidArgument("gradient_covariance: no tasks");
  const std::size_t s = grads[0].size();
  if (s == 0) throw InvalidArgument("gradient_covariance: empty sample");
  const std::size_t d = grads[0][0].size();
  for (const auto& task : grads) {
    if (task.size() != s) throw ShapeError("gradient_covariance: tasks have different sample counts");
    for (const auto& g : task) {
      if (g.size() != d) throw ShapeError("gradient_covariance: gradients have different sizes");
    }
  }
  CovarianceEstimate est;
  est.tasks = m;
  est.samples = s;
  est.centered.assign(m * m, 0.0);
  est.raw.assign(m * m, 0.0);
  est.raw_stderr.assign(m * m, 0.0);
  est.mean_norm.assign(m, 0.0);

  std::vector<std::vector<double>> means(m, std::vector<double>(d, 0.0));
  for (std::size_t c = 0; c < m; ++c) {
    for (std::size_t k = 0; k < d; ++k) {
      CompensatedSum acc;
      for (std::size_t i = 0; i < s; ++i) acc.add(grads[c][i][k]);
      means[c][k] = acc.value() / static_cast<double>(s);
    }
    est.mean_norm[c] = l2_norm(means[c]);
  }
  const double ns = static_cast<double>(s);
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = 0; b <= a; ++b) {
      CompensatedSum sum;
      CompensatedSum sq;
      for (std::size_t i = 0; i < s; ++i) {
        const double p = dot(grads[a][i], grads[b][i]);
        sum.add(p);
        sq.add(p * p);
      }
      const double raw = sum.value() / ns;
      const double var = s > 1 ? std::max(0.0, (sq.value() - ns * raw * raw) / (ns - 1.0)) : 0.0;
      const double se = std::sqrt(var / ns);
      const double centered = raw - dot(means[a], means[b]);
      for (auto [i, j] : {std::pair{a, b}, std::pair{b, a}}) {
        est.raw[i * m + j] = raw;
        est.raw_stderr[i * m + j] = se;
        est.centered[i * m + j] = centered;
      }
    }
  }
  return est;
}

double joint_norm_prediction(std::span<const double> c, std::size_t m) {
  check_matrix(c, m);
  double acc = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < i; ++j) acc += c[i * m + j] / c[i * m + i];
  }
  const double md = static_cast<double>(m);
  const double inner = (1.0 + (2.0 / md) * acc) / md;
  if (inner < 0.0) throw NumericError("joint_norm_prediction: negative variance term");
  return std::sqrt(inner);
}

double equicorrelated_prediction(std::span<const double> c, std::size_t m) {
  check_matrix(c, m);
  if (m == 1) return 1.0;
  double diag = 0.0;
  double off = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) (i == j ? diag : off) += c[i * m + j];
  }
  const double md = static_cast<double>(m);
  const double rho = (off / (md * (md - 1.0))) / (diag / md);
  const double inner = (1.0 + (md - 1.0) * rho) / md;
  if (inner < 0.0) throw NumericError("equicorrelated_prediction: negative variance term");
  return std::sqrt(inner);
}

double uncorrelated_prediction(std::size_t m) {
  if (m < 1) throw InvalidArgument("uncorrelated_prediction: M must be at least 1");
  return 1.0 / std::sqrt(static_cast<double>(m));
}

VulnerabilityReport vulnerability_report(const nn::SharedBackboneModel& model, const data::Dataset& dataset,
                                         const std::vector<std::string>& tasks, double loss_scale) {
  if (tasks.empty()) throw InvalidArgument("vulnerability_report: no tasks");
  const auto grads = per_example_gradients(model, dataset, tasks, loss_scale);
  const std::size_t m = tasks.size();
  const std::size_t s = dataset.size();
  VulnerabilityReport rep;
  rep.tasks = tasks;
  rep.samples = s;
  rep.task_norms.assign(m, 0.0);
  for (std::size_t c = 0; c < m; ++c) {
    CompensatedSum acc;
    for (const auto& g : grads[c]) acc.add(l2_norm(g));
    rep.task_norms[c] = acc.value() / static_cast<double>(s);
  }
  CompensatedSum norm_acc;
  CompensatedSum sq_acc;
  std::vector<double> r(grads[0][0].size());
  for (std::size_t i = 0; i < s; ++i) {
    std::fill(r.begin(), r.end(), 0.0);
    for (std::size_t c = 0; c < m; ++c) {
      for (std::size_t k = 0; k < r.size(); ++k) r[k] += grads[c][i][k];
    }
    for (double& v : r) v /= static_cast<double>(m);
    const double n2 = l2_norm(r);
    norm_acc.add(n2);
    sq_acc.add(n2 * n2);
  }
  rep.joint_norm = norm_acc.value() / static_cast<double>(s);
  rep.joint_rms = std::sqrt(sq_acc.value() / static_cast<double>(s));
  rep.covariance = gradient_covariance(grads);
  rep.predicted_ratio = joint_norm_prediction(rep.covariance.centered, m);
  rep.predicted_ratio_raw = joint_norm_prediction(rep.covariance.raw, m);
  rep.equicorrelated_prediction = equicorrelated_prediction(rep.covariance.centered, m);
  rep.predicted_ratio_uncorrelated = uncorrelated_prediction(m);
  return rep;
}

ad::InputLoss pixel_subset_loss(const nn::SharedBackboneModel& model, const Tensor& target, const std::string& task,
                                std::vector<std::size_t> pixels) {
  const nn::TaskSpec& spec = model.task(task);
  const std::size_t n = spec.output_shape[1] * spec.output_shape[2];
  if (pixels.empty()) throw InvalidArgument("pixel subset is empty");
  for (std::size_t p : pixels) {
    if (p >= n) throw InvalidArgument("pixel index out of range");
  }
  return [&model, &target, task, spec, pixels = std::move(pixels)](ad::Tape& tape, const ad::Var& xv) {
    if (xv.shape().at(0) != 1) throw ShapeError("pixel subset loss expects a single example");
    const ad::Var map = nn::per_pixel_loss(model.forward(tape, xv, task), target, spec);
    return ad::mean(ad::gather(map, pixels));
  };
}

double subsample_output_vulnerability(const nn::SharedBackboneModel& model, const Tensor& x, const Tensor& target,
                                      const std::string& task, std::size_t k, std::size_t repeats,
                                      std::uint64_t seed) {
  const nn::TaskSpec& spec = model.task(task);
  if (x.rank() != 4 || x.dim(0) != 1) throw ShapeError("subsample_output_vulnerability expects one example [1, C, H, W]");
  const std::size_t pixels = spec.output_shape[1] * spec.output_shape[2];
  if (k < 1 || k > pixels) {
    throw InvalidArgument("pixel count k=" + std::to_string(k) + " outside [1, " + std::to_string(pixels) + "]");
  }
  if (repeats < 1) throw InvalidArgument("repeats must be at least 1");
  Rng rng(seed);
  CompensatedSum acc;
  for (std::size_t rep = 0; rep < repeats; ++rep) {
    const ad::InputLoss loss = pixel_subset_loss(model, target, task, sample_pixels(pixels, k, rng));
    acc.add(l2_norm(ad::grad_wrt_input(loss, x).data()));
  }
  return acc.value() / static_cast<double>(repeats);
}

std::vector<double> subsample_curve(const nn::SharedBackboneModel& model, const data::Dataset& dataset,
                                    const std::string& task, const std::vector<std::size_t>& ks,
                                    std::size_t repeats, std::uint64_t seed) {
  if (dataset.size() == 0) throw InvalidArgument("subsample_curve: empty sample");
  auto it = dataset.targets.find(task);
  if (it == dataset.targets.end()) throw InvalidArgument("dataset has no target for task '" + task + "'");
  std::vector<double> out;
  for (std::size_t ki = 0; ki < ks.size(); ++ki) {
    CompensatedSum acc;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      const data::Batch ex = dataset.example(i);
      const std::uint64_t s = derive_seed(derive_seed(seed, static_cast<std::uint64_t>(ks[ki])), i);
      acc.add(subsample_output_vulnerability(model, ex.images, ex.targets.find(task)->second, task, ks[ki], repeats,
                                             s));
    }
    out.push_back(acc.value() / static_cast<double>(dataset.size()));
  }
  return out;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw InvalidArgument("spearman: need two equal-length series");
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace mtr::vuln
