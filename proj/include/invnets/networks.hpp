#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "invnets/common.hpp"
#include "invnets/numerics.hpp"
#include "invnets/rng.hpp"
#include "invnets/targets.hpp"

namespace invnets::net {

using num::CMat;
using num::Cplx;
using num::CVec;
using num::RMat;
using num::RVec;

// ---------------------------------------------------------------------------
// Activations.
// ---------------------------------------------------------------------------

/// zReLU passes z when phase(z) lies in [0, pi/2] u [pi, 3pi/2], else 0.
/// The pass set is exactly the closed first and third quadrants, so the test
/// is done on signs; zrelu(0) = 0.
inline bool zrelu_pass(double re, double im) {
  return (re >= 0.0 && im >= 0.0) || (re <= 0.0 && im <= 0.0);
}

/// Open-quadrant gate used for gradients (subgradient 0 on the boundary).
inline bool zrelu_pass_strict(double re, double im) {
  return (re > 0.0 && im > 0.0) || (re < 0.0 && im < 0.0);
}

inline Cplx zrelu(Cplx z) {
  return zrelu_pass(z.real(), z.imag()) ? z : Cplx(0.0, 0.0);
}

enum class Activation { identity, relu, tanh, sigmoid };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    default: return "sigmoid";
  }
}

inline double act_eval(Activation a, double s) {
  switch (a) {
    case Activation::identity: return s;
    case Activation::relu: return s > 0.0 ? s : 0.0;
    case Activation::tanh: return std::tanh(s);
    default: return 1.0 / (1.0 + std::exp(-s));
  }
}

inline double act_grad(Activation a, double s) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::relu: return s > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: {
      double t = std::tanh(s);
      return 1.0 - t * t;
    }
    default: {
      double p = 1.0 / (1.0 + std::exp(-s));
      return p * (1.0 - p);
    }
  }
}

// ---------------------------------------------------------------------------
// Batches and the shared descent driver.
// ---------------------------------------------------------------------------

struct RealBatch {
  RMat x;  // rows = samples
  RVec y;
};

struct CplxBatch {
  RMat x_re, x_im;
  RVec y_re, y_im;
};

struct TrainConfig {
  double step_size = 0.05;
  int max_epochs = 2000;
  int batch = 0;  // 0 = full batch
  std::uint64_t seed = 0;
  double loss_tolerance = 1e-12;
};

struct TrainingDivergence : std::runtime_error {
  int epoch;
  TrainingDivergence(int e, const std::string& what) : std::runtime_error(what), epoch(e) {}
};

struct TrainResult {
  std::vector<double> loss_curve;  // accepted (monotone) full-batch losses
  int epochs = 0;
  int restarts = 0;
  double final_loss = 0.0;
};

namespace detail {

inline void require_finite_targets(const RVec& y) {
  if (y.size() == 0) throw ContractError("train: dataset is empty");
  if (!y.allFinite()) throw ContractError("train: targets must be finite");
}

/// Full-batch gradient descent with step halving on loss increase and mild
/// growth on acceptance. The recorded loss curve is monotone nonincreasing.
template <typename Net, typename Batch>
TrainResult descend(Net& net, const Batch& batch, const TrainConfig& cfg) {
  if (cfg.step_size <= 0.0) throw ContractError("train: step_size must be positive");
  TrainResult result;
  RVec theta = net.pack();
  double loss = net.loss(batch);
  if (!std::isfinite(loss)) throw TrainingDivergence(0, "train: initial loss is non-finite");
  result.loss_curve.push_back(loss);
  double step = cfg.step_size;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    RVec grad = net.grad(batch);
    if (!grad.allFinite())
      throw TrainingDivergence(epoch, "train: gradient diverged at epoch " +
                                          std::to_string(epoch));
    // backtracking line search along -grad, restarted at twice the last
    // accepted step so the step size can recover after cautious stretches
    double trial = 2.0 * step;
    bool accepted = false;
    while (trial > 1e-18) {
      RVec cand = theta - trial * grad;
      net.unpack(cand);
      double cand_loss = net.loss(batch);
      if (std::isfinite(cand_loss) && cand_loss <= loss) {
        theta = std::move(cand);
        loss = cand_loss;
        step = trial;
        accepted = true;
        break;
      }
      trial *= 0.5;
      ++result.restarts;
    }
    if (!accepted) break;  // no descent direction at representable step size
    result.loss_curve.push_back(loss);
    result.epochs = epoch;
    if (loss <= cfg.loss_tolerance) break;
  }
  net.unpack(theta);
  result.final_loss = loss;
  return result;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// One-hidden-layer complex-valued network with real output:
// f(x) = Re[ sum_i w_i zrelu(v_i' x + b_i) + a ].
// ---------------------------------------------------------------------------

struct CVNN {
  using Batch = RealBatch;

  int input_dim = 0;
  int width = 0;
  RMat v_re, v_im;  // width x input_dim
  RVec b_re, b_im;
  RVec w_re, w_im;
  double a_re = 0.0, a_im = 0.0;  // a_im is carried but cannot reach the real output

  static CVNN init(int d, int m, rng::Stream& stream) {
    CVNN net;
    net.input_dim = d;
    net.width = m;
    // zero-mean Gaussian, scale 1/sqrt(fan-in) per layer
    const double scale_in = 1.0 / std::sqrt(static_cast<double>(d));
    const double scale_out = 1.0 / std::sqrt(static_cast<double>(m));
    auto fill = [&](RMat& mat, double s) {
      mat.resize(m, d);
      for (Eigen::Index i = 0; i < mat.size(); ++i) mat.data()[i] = s * stream.normal();
    };
    auto fillv = [&](RVec& vec, double s) {
      vec.resize(m);
      for (Eigen::Index i = 0; i < m; ++i) vec[i] = s * stream.normal();
    };
    fill(net.v_re, scale_in);
    fill(net.v_im, scale_in);
    fillv(net.b_re, scale_in);
    fillv(net.b_im, scale_in);
    fillv(net.w_re, scale_out);
    fillv(net.w_im, scale_out);
    net.a_re = scale_out * stream.normal();
    net.a_im = scale_out * stream.normal();
    return net;
  }

  long param_count() const { return 2L * (static_cast<long>(width) * input_dim + width + width + 1); }

  double forward(const RVec& x) const {
    if (x.size() != input_dim) throw ContractError("CVNN::forward: dimension mismatch");
    double out = a_re;
    for (int i = 0; i < width; ++i) {
      double sre = v_re.row(i).dot(x) + b_re[i];
      double sim = v_im.row(i).dot(x) + b_im[i];
      if (!zrelu_pass(sre, sim)) continue;
      out += w_re[i] * sre - w_im[i] * sim;
    }
    return out;
  }

  RVec forward_batch(const RMat& x) const {
    RMat s_re = (x * v_re.transpose()).rowwise() + b_re.transpose();
    RMat s_im = (x * v_im.transpose()).rowwise() + b_im.transpose();
    RMat gate = gate_mask(s_re, s_im);
    RMat u_re = s_re.cwiseProduct(gate);
    RMat u_im = s_im.cwiseProduct(gate);
    return (u_re * w_re - u_im * w_im).array() + a_re;
  }

  RVec pack() const {
    RVec theta(param_count());
    Eigen::Index o = 0;
    auto put_m = [&](const RMat& m) { theta.segment(o, m.size()) = Eigen::Map<const RVec>(m.data(), m.size()); o += m.size(); };
    auto put_v = [&](const RVec& v) { theta.segment(o, v.size()) = v; o += v.size(); };
    put_m(v_re); put_m(v_im); put_v(b_re); put_v(b_im); put_v(w_re); put_v(w_im);
    theta[o++] = a_re;
    theta[o++] = a_im;
    return theta;
  }

  void unpack(const RVec& theta) {
    Eigen::Index o = 0;
    auto take_m = [&](RMat& m) { Eigen::Map<RVec>(m.data(), m.size()) = theta.segment(o, m.size()); o += m.size(); };
    auto take_v = [&](RVec& v) { v = theta.segment(o, v.size()); o += v.size(); };
    take_m(v_re); take_m(v_im); take_v(b_re); take_v(b_im); take_v(w_re); take_v(w_im);
    a_re = theta[o++];
    a_im = theta[o++];
  }

  double loss(const Batch& batch) const {
    RVec r = forward_batch(batch.x) - batch.y;
    return r.squaredNorm() / static_cast<double>(batch.y.size());
  }

  RVec grad(const Batch& batch) const {
    const double n = static_cast<double>(batch.y.size());
    RMat s_re = (batch.x * v_re.transpose()).rowwise() + b_re.transpose();
    RMat s_im = (batch.x * v_im.transpose()).rowwise() + b_im.transpose();
    RMat gate = gate_mask(s_re, s_im);
    RMat gate_strict = gate_mask_strict(s_re, s_im);
    RMat u_re = s_re.cwiseProduct(gate);
    RMat u_im = s_im.cwiseProduct(gate);
    RVec out = (u_re * w_re - u_im * w_im).array() + a_re;
    RVec r = 2.0 * (out - batch.y) / n;

    RMat ds_re = (r * w_re.transpose()).cwiseProduct(gate_strict);
    RMat ds_im = (-(r * w_im.transpose())).cwiseProduct(gate_strict);

    CVNN g;  // reuse the layout for packing the gradient
    g.input_dim = input_dim;
    g.width = width;
    g.v_re = ds_re.transpose() * batch.x;
    g.v_im = ds_im.transpose() * batch.x;
    g.b_re = ds_re.colwise().sum();
    g.b_im = ds_im.colwise().sum();
    g.w_re = u_re.transpose() * r;
    g.w_im = -(u_im.transpose() * r);
    g.a_re = r.sum();
    g.a_im = 0.0;
    return g.pack();
  }

 private:
  static RMat gate_mask(const RMat& s_re, const RMat& s_im) {
    return ((s_re.array() >= 0.0 && s_im.array() >= 0.0) ||
            (s_re.array() <= 0.0 && s_im.array() <= 0.0))
        .cast<double>()
        .matrix();
  }
  static RMat gate_mask_strict(const RMat& s_re, const RMat& s_im) {
    return ((s_re.array() > 0.0 && s_im.array() > 0.0) ||
            (s_re.array() < 0.0 && s_im.array() < 0.0))
        .cast<double>()
        .matrix();
  }
};

// ---------------------------------------------------------------------------
// One-hidden-layer real network: f(x) = w' act(V x + b) + a.
// ---------------------------------------------------------------------------

struct FCN {
  using Batch = RealBatch;

  int input_dim = 0;
  int width = 0;
  Activation act = Activation::relu;
  RMat v;
  RVec b, w;
  double a = 0.0;

  static FCN init(int d, int m, rng::Stream& stream, Activation act = Activation::relu) {
    FCN net;
    net.input_dim = d;
    net.width = m;
    net.act = act;
    const double scale_in = 1.0 / std::sqrt(static_cast<double>(d));
    const double scale_out = 1.0 / std::sqrt(static_cast<double>(m));
    net.v.resize(m, d);
    for (Eigen::Index i = 0; i < net.v.size(); ++i) net.v.data()[i] = scale_in * stream.normal();
    net.b.resize(m);
    net.w.resize(m);
    for (int i = 0; i < m; ++i) net.b[i] = scale_in * stream.normal();
    for (int i = 0; i < m; ++i) net.w[i] = scale_out * stream.normal();
    net.a = scale_out * stream.normal();
    return net;
  }

  long param_count() const { return static_cast<long>(width) * input_dim + 2L * width + 1; }

  double forward(const RVec& x) const {
    if (x.size() != input_dim) throw ContractError("FCN::forward: dimension mismatch");
    double out = a;
    for (int i = 0; i < width; ++i) out += w[i] * act_eval(act, v.row(i).dot(x) + b[i]);
    return out;
  }

  RVec forward_batch(const RMat& x) const {
    RMat s = (x * v.transpose()).rowwise() + b.transpose();
    RMat h = s.unaryExpr([this](double t) { return act_eval(act, t); });
    return (h * w).array() + a;
  }

  RVec pack() const {
    RVec theta(param_count());
    Eigen::Index o = 0;
    theta.segment(o, v.size()) = Eigen::Map<const RVec>(v.data(), v.size());
    o += v.size();
    theta.segment(o, b.size()) = b;
    o += b.size();
    theta.segment(o, w.size()) = w;
    o += w.size();
    theta[o] = a;
    return theta;
  }

  void unpack(const RVec& theta) {
    Eigen::Index o = 0;
    Eigen::Map<RVec>(v.data(), v.size()) = theta.segment(o, v.size());
    o += v.size();
    b = theta.segment(o, b.size());
    o += b.size();
    w = theta.segment(o, w.size());
    o += w.size();
    a = theta[o];
  }

  double loss(const Batch& batch) const {
    RVec r = forward_batch(batch.x) - batch.y;
    return r.squaredNorm() / static_cast<double>(batch.y.size());
  }

  RVec grad(const Batch& batch) const {
    const double n = static_cast<double>(batch.y.size());
    RMat s = (batch.x * v.transpose()).rowwise() + b.transpose();
    RMat h = s.unaryExpr([this](double t) { return act_eval(act, t); });
    RVec out = (h * w).array() + a;
    RVec r = 2.0 * (out - batch.y) / n;
    RMat dphi = s.unaryExpr([this](double t) { return act_grad(act, t); });
    RMat ds = (r * w.transpose()).cwiseProduct(dphi);

    FCN g;
    g.input_dim = input_dim;
    g.width = width;
    g.v = ds.transpose() * batch.x;
    g.b = ds.colwise().sum();
    g.w = h.transpose() * r;
    g.a = r.sum();
    return g.pack();
  }
};

// ---------------------------------------------------------------------------
// One-dimensional convolution network: sliding (or circular) dot products,
// optional pointwise activation, optional mean pooling, linear head.
// ---------------------------------------------------------------------------

enum class Pooling { none, mean };

struct CNN1D {
  using Batch = RealBatch;

  int input_dim = 0;
  RVec filter;
  RVec head;  // one coefficient per conv output, or a single one when pooled
  double head_bias = 0.0;
  Pooling pooling = Pooling::none;
  bool circular = false;
  Activation act = Activation::identity;

  int conv_len() const {
    return circular ? input_dim : input_dim - static_cast<int>(filter.size()) + 1;
  }

  static CNN1D init(int d, int filter_len, rng::Stream& stream, Pooling pooling = Pooling::none,
                    bool circular = false, Activation act = Activation::identity) {
    if (filter_len >= d) throw ContractError("CNN1D: filter length must satisfy l < d");
    if (filter_len < 1) throw ContractError("CNN1D: filter length must be >= 1");
    CNN1D net;
    net.input_dim = d;
    net.pooling = pooling;
    net.circular = circular;
    net.act = act;
    const double scale_in = 1.0 / std::sqrt(static_cast<double>(filter_len));
    net.filter.resize(filter_len);
    for (int i = 0; i < filter_len; ++i) net.filter[i] = scale_in * stream.normal();
    int head_len = pooling == Pooling::mean ? 1 : net.conv_len();
    const double scale_out = 1.0 / std::sqrt(static_cast<double>(head_len));
    net.head.resize(head_len);
    for (int i = 0; i < head_len; ++i) net.head[i] = scale_out * stream.normal();
    net.head_bias = scale_out * stream.normal();
    return net;
  }

  long param_count() const {
    return static_cast<long>(filter.size()) + static_cast<long>(head.size()) + 1;
  }

  /// conv_k(x) = sum_i filter_i x_{k+i}; circular wraps indices mod d.
  RVec conv(const RVec& x) const {
    const int l = static_cast<int>(filter.size());
    const int out_len = conv_len();
    RVec c = RVec::Zero(out_len);
    for (int k = 0; k < out_len; ++k) {
      double acc = 0.0;
      for (int i = 0; i < l; ++i) {
        int idx = circular ? (k + i) % input_dim : k + i;
        acc += filter[i] * x[idx];
      }
      c[k] = acc;
    }
    return c;
  }

  double forward(const RVec& x) const {
    if (x.size() != input_dim) throw ContractError("CNN1D::forward: dimension mismatch");
    RVec c = conv(x);
    for (int k = 0; k < c.size(); ++k) c[k] = act_eval(act, c[k]);
    if (pooling == Pooling::mean) return head[0] * c.mean() + head_bias;
    return head.dot(c) + head_bias;
  }

  RMat conv_batch(const RMat& x) const {
    const int l = static_cast<int>(filter.size());
    const int out_len = conv_len();
    RMat c = RMat::Zero(x.rows(), out_len);
    for (int k = 0; k < out_len; ++k)
      for (int i = 0; i < l; ++i) {
        int idx = circular ? (k + i) % input_dim : k + i;
        c.col(k) += filter[i] * x.col(idx);
      }
    return c;
  }

  RVec forward_batch(const RMat& x) const {
    RMat h = conv_batch(x).unaryExpr([this](double t) { return act_eval(act, t); });
    if (pooling == Pooling::mean)
      return (head[0] / conv_len()) * h.rowwise().sum().array() + head_bias;
    return (h * head).array() + head_bias;
  }

  RVec pack() const {
    RVec theta(param_count());
    theta.segment(0, filter.size()) = filter;
    theta.segment(filter.size(), head.size()) = head;
    theta[filter.size() + head.size()] = head_bias;
    return theta;
  }

  void unpack(const RVec& theta) {
    filter = theta.segment(0, filter.size());
    head = theta.segment(filter.size(), head.size());
    head_bias = theta[filter.size() + head.size()];
  }

  double loss(const Batch& batch) const {
    RVec r = forward_batch(batch.x) - batch.y;
    return r.squaredNorm() / static_cast<double>(batch.y.size());
  }

  RVec grad(const Batch& batch) const {
    const double n = static_cast<double>(batch.y.size());
    const int l = static_cast<int>(filter.size());
    const int out_len = conv_len();
    RMat c = conv_batch(batch.x);
    RMat h = c.unaryExpr([this](double t) { return act_eval(act, t); });
    RVec out;
    if (pooling == Pooling::mean)
      out = (head[0] / out_len) * h.rowwise().sum().array() + head_bias;
    else
      out = (h * head).array() + head_bias;
    RVec r = 2.0 * (out - batch.y) / n;

    RMat dh;
    RVec ghead(head.size());
    if (pooling == Pooling::mean) {
      ghead[0] = h.rowwise().sum().dot(r) / out_len;
      dh = (head[0] / out_len) * r * RVec::Ones(out_len).transpose();
    } else {
      ghead = h.transpose() * r;
      dh = r * head.transpose();
    }
    RMat dc = dh.cwiseProduct(c.unaryExpr([this](double t) { return act_grad(act, t); }));

    CNN1D g = *this;
    for (int i = 0; i < l; ++i) {
      double acc = 0.0;
      for (int k = 0; k < out_len; ++k) {
        int idx = circular ? (k + i) % input_dim : k + i;
        acc += dc.col(k).dot(batch.x.col(idx));
      }
      g.filter[i] = acc;
    }
    g.head = ghead;
    g.head_bias = r.sum();
    return g.pack();
  }
};

// ---------------------------------------------------------------------------
// Complex-output forecaster (one hidden zReLU layer, complex head); used by
// the signal benchmark where the prediction target is a complex sample.
// ---------------------------------------------------------------------------

struct CplxForecaster {
  using Batch = CplxBatch;

  int input_dim = 0;
  int width = 0;
  RMat v_re, v_im;
  RVec b_re, b_im, w_re, w_im;
  double a_re = 0.0, a_im = 0.0;

  static CplxForecaster init(int d, int m, rng::Stream& stream) {
    CplxForecaster net;
    net.input_dim = d;
    net.width = m;
    const double scale_in = 1.0 / std::sqrt(static_cast<double>(d));
    const double scale_out = 1.0 / std::sqrt(static_cast<double>(m));
    auto fill = [&](RMat& mat, double s) {
      mat.resize(m, d);
      for (Eigen::Index i = 0; i < mat.size(); ++i) mat.data()[i] = s * stream.normal();
    };
    auto fillv = [&](RVec& vec, double s) {
      vec.resize(m);
      for (Eigen::Index i = 0; i < m; ++i) vec[i] = s * stream.normal();
    };
    fill(net.v_re, scale_in);
    fill(net.v_im, scale_in);
    fillv(net.b_re, scale_in);
    fillv(net.b_im, scale_in);
    fillv(net.w_re, scale_out);
    fillv(net.w_im, scale_out);
    net.a_re = scale_out * stream.normal();
    net.a_im = scale_out * stream.normal();
    return net;
  }

  long param_count() const { return 2L * (static_cast<long>(width) * input_dim + width + width + 1); }

  void forward_batch(const RMat& x_re, const RMat& x_im, RVec& out_re, RVec& out_im) const {
    RMat s_re = (x_re * v_re.transpose() - x_im * v_im.transpose()).rowwise() + b_re.transpose();
    RMat s_im = (x_re * v_im.transpose() + x_im * v_re.transpose()).rowwise() + b_im.transpose();
    RMat gate = ((s_re.array() >= 0.0 && s_im.array() >= 0.0) ||
                 (s_re.array() <= 0.0 && s_im.array() <= 0.0))
                    .cast<double>()
                    .matrix();
    RMat u_re = s_re.cwiseProduct(gate);
    RMat u_im = s_im.cwiseProduct(gate);
    out_re = (u_re * w_re - u_im * w_im).array() + a_re;
    out_im = (u_re * w_im + u_im * w_re).array() + a_im;
  }

  RVec pack() const {
    RVec theta(param_count());
    Eigen::Index o = 0;
    auto put_m = [&](const RMat& m) { theta.segment(o, m.size()) = Eigen::Map<const RVec>(m.data(), m.size()); o += m.size(); };
    auto put_v = [&](const RVec& v) { theta.segment(o, v.size()) = v; o += v.size(); };
    put_m(v_re); put_m(v_im); put_v(b_re); put_v(b_im); put_v(w_re); put_v(w_im);
    theta[o++] = a_re;
    theta[o++] = a_im;
    return theta;
  }

  void unpack(const RVec& theta) {
    Eigen::Index o = 0;
    auto take_m = [&](RMat& m) { Eigen::Map<RVec>(m.data(), m.size()) = theta.segment(o, m.size()); o += m.size(); };
    auto take_v = [&](RVec& v) { v = theta.segment(o, v.size()); o += v.size(); };
    take_m(v_re); take_m(v_im); take_v(b_re); take_v(b_im); take_v(w_re); take_v(w_im);
    a_re = theta[o++];
    a_im = theta[o++];
  }

  double loss(const Batch& batch) const {
    RVec o_re, o_im;
    forward_batch(batch.x_re, batch.x_im, o_re, o_im);
    double n = static_cast<double>(batch.y_re.size());
    return ((o_re - batch.y_re).squaredNorm() + (o_im - batch.y_im).squaredNorm()) / n;
  }

  RVec grad(const Batch& batch) const {
    const double n = static_cast<double>(batch.y_re.size());
    RMat s_re = (batch.x_re * v_re.transpose() - batch.x_im * v_im.transpose()).rowwise() +
                b_re.transpose();
    RMat s_im = (batch.x_re * v_im.transpose() + batch.x_im * v_re.transpose()).rowwise() +
                b_im.transpose();
    RMat gate = ((s_re.array() >= 0.0 && s_im.array() >= 0.0) ||
                 (s_re.array() <= 0.0 && s_im.array() <= 0.0))
                    .cast<double>()
                    .matrix();
    RMat gate_strict = ((s_re.array() > 0.0 && s_im.array() > 0.0) ||
                        (s_re.array() < 0.0 && s_im.array() < 0.0))
                           .cast<double>()
                           .matrix();
    RMat u_re = s_re.cwiseProduct(gate);
    RMat u_im = s_im.cwiseProduct(gate);
    RVec r_re = 2.0 * ((u_re * w_re - u_im * w_im).array() + a_re - batch.y_re.array()) / n;
    RVec r_im = 2.0 * ((u_re * w_im + u_im * w_re).array() + a_im - batch.y_im.array()) / n;

    RMat ds_re = (r_re * w_re.transpose() + r_im * w_im.transpose()).cwiseProduct(gate_strict);
    RMat ds_im = (r_im * w_re.transpose() - r_re * w_im.transpose()).cwiseProduct(gate_strict);

    CplxForecaster g;
    g.input_dim = input_dim;
    g.width = width;
    g.v_re = ds_re.transpose() * batch.x_re + ds_im.transpose() * batch.x_im;
    g.v_im = ds_im.transpose() * batch.x_re - ds_re.transpose() * batch.x_im;
    g.b_re = ds_re.colwise().sum();
    g.b_im = ds_im.colwise().sum();
    g.w_re = u_re.transpose() * r_re + u_im.transpose() * r_im;
    g.w_im = u_re.transpose() * r_im - u_im.transpose() * r_re;
    g.a_re = r_re.sum();
    g.a_im = r_im.sum();
    return g.pack();
  }
};

/// Full-batch gradient descent; deterministic given the initial weights.
template <typename Net>
TrainResult train(Net& net, const typename Net::Batch& batch, const TrainConfig& cfg) {
  if constexpr (std::is_same_v<typename Net::Batch, RealBatch>) {
    detail::require_finite_targets(batch.y);
  } else {
    detail::require_finite_targets(batch.y_re);
    detail::require_finite_targets(batch.y_im);
  }
  return detail::descend(net, batch, cfg);
}

// ---------------------------------------------------------------------------
// Samplers and width sweeps.
// ---------------------------------------------------------------------------

/// Uniform radius on [r_lo, r_hi), uniform direction.
inline RVec sample_shell(int d, double r_lo, double r_hi, rng::Stream& stream) {
  double r = stream.uniform(r_lo, r_hi);
  auto dir = stream.sphere(static_cast<std::size_t>(d));
  RVec x = Eigen::Map<RVec>(dir.data(), d);
  return r * x;
}

inline RealBatch make_radial_dataset(const tgt::RadialTarget& target, int n, rng::Stream& stream) {
  RealBatch batch;
  batch.x.resize(n, target.d);
  batch.y.resize(n);
  for (int i = 0; i < n; ++i) {
    RVec x = sample_shell(target.d, target.shell_lo(), target.shell_hi(), stream);
    batch.x.row(i) = x.transpose();
    batch.y[i] = eval_radial(target, x);
  }
  return batch;
}

enum class Arch { cvnn, fcn, cnn1d };

inline const char* to_string(Arch a) {
  switch (a) {
    case Arch::cvnn: return "cvnn";
    case Arch::fcn: return "fcn";
    default: return "cnn1d";
  }
}

struct SweepConfig {
  int n_train = 2048;
  int n_test = 2048;
  TrainConfig train;
  int cnn_filter_len = 3;  // used when arch == cnn1d: width is ignored for the filter
};

struct SweepCell {
  Arch arch = Arch::cvnn;
  int width = 0;
  long params = 0;
  std::uint64_t seed = 0;
  double train_mse = 0.0;
  double test_mse = 0.0;
  int epochs = 0;
  bool valid = false;
};

struct SweepResult {
  std::vector<SweepCell> cells;
  std::vector<int> widths;
  std::vector<double> median_test_mse;
  double loglog_slope = 0.0;
};

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double test_mse(const std::function<double(const RVec&)>& f, const RealBatch& batch) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < batch.x.rows(); ++i) {
    double e = f(batch.x.row(i).transpose()) - batch.y[i];
    acc += e * e;
  }
  return acc / static_cast<double>(batch.x.rows());
}

/// OLS slope of log(y) on log(x).
inline double loglog_slope(const std::vector<int>& x, const std::vector<double>& y) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(y[i] > 0.0) || !std::isfinite(y[i])) continue;
    double lx = std::log(static_cast<double>(x[i])), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++n;
  }
  if (n < 2) return 0.0;
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace detail

/// Trains one (arch, width, seed) cell on a shared per-seed dataset.
/// Datasets depend only on the seed so that widths are paired.
inline SweepCell run_sweep_cell(const tgt::RadialTarget& target, Arch arch, int width,
                                std::uint64_t seed, const SweepConfig& cfg) {
  SweepCell cell;
  cell.arch = arch;
  cell.width = width;
  cell.seed = seed;
  auto data_stream = rng::split(seed, 0xDA7A);
  RealBatch train_set = make_radial_dataset(target, cfg.n_train, data_stream);
  RealBatch test_set = make_radial_dataset(target, cfg.n_test, data_stream);
  auto init_stream = rng::split(seed ^ (0x517EULL * static_cast<std::uint64_t>(width + 1)), 0x1217);
  try {
    switch (arch) {
      case Arch::cvnn: {
        CVNN net = CVNN::init(target.d, width, init_stream);
        cell.params = net.param_count();
        auto res = train(net, train_set, cfg.train);
        cell.train_mse = res.final_loss;
        cell.epochs = res.epochs;
        cell.test_mse = detail::test_mse([&](const RVec& x) { return net.forward(x); }, test_set);
        break;
      }
      case Arch::fcn: {
        FCN net = FCN::init(target.d, width, init_stream, Activation::relu);
        cell.params = net.param_count();
        auto res = train(net, train_set, cfg.train);
        cell.train_mse = res.final_loss;
        cell.epochs = res.epochs;
        cell.test_mse = detail::test_mse([&](const RVec& x) { return net.forward(x); }, test_set);
        break;
      }
      case Arch::cnn1d: {
        CNN1D net = CNN1D::init(target.d, cfg.cnn_filter_len, init_stream, Pooling::mean,
                                /*circular=*/true, Activation::relu);
        cell.params = net.param_count();
        auto res = train(net, train_set, cfg.train);
        cell.train_mse = res.final_loss;
        cell.epochs = res.epochs;
        cell.test_mse = detail::test_mse([&](const RVec& x) { return net.forward(x); }, test_set);
        break;
      }
    }
    cell.valid = true;
  } catch (const TrainingDivergence&) {
    cell.valid = false;
  }
  return cell;
}

inline SweepResult width_sweep(const tgt::RadialTarget& target, Arch arch,
                               const std::vector<int>& widths,
                               const std::vector<std::uint64_t>& seeds, const SweepConfig& cfg) {
  if (widths.size() < 3) throw ContractError("width_sweep: need at least 3 widths");
  if (seeds.size() < 3) throw ContractError("width_sweep: need at least 3 seeds");
  for (std::size_t i = 1; i < widths.size(); ++i)
    if (widths[i] <= widths[i - 1]) throw ContractError("width_sweep: widths must be increasing");

  SweepResult result;
  result.widths = widths;
  result.cells.resize(widths.size() * seeds.size());
  parallel_cells(result.cells.size(), [&](std::size_t idx) {
    std::size_t wi = idx / seeds.size(), si = idx % seeds.size();
    result.cells[idx] = run_sweep_cell(target, arch, widths[wi], seeds[si], cfg);
  });

  for (std::size_t wi = 0; wi < widths.size(); ++wi) {
    std::vector<double> vals;
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      const auto& cell = result.cells[wi * seeds.size() + si];
      if (cell.valid) vals.push_back(cell.test_mse);
    }
    result.median_test_mse.push_back(detail::median(vals));
  }
  result.loglog_slope = detail::loglog_slope(widths, result.median_test_mse);
  return result;
}

inline std::string sweep_to_csv(const SweepResult& result) {
  std::ostringstream out;
  out << "arch,width,param_count,seed,train_mse,test_mse,epochs,valid\n";
  char buf[64];
  for (const auto& c : result.cells) {
    out << to_string(c.arch) << ',' << c.width << ',' << c.params << ',' << c.seed << ',';
    std::snprintf(buf, sizeof(buf), "%.12g", c.train_mse);
    out << buf << ',';
    std::snprintf(buf, sizeof(buf), "%.12g", c.test_mse);
    out << buf << ',' << c.epochs << ',' << (c.valid ? 1 : 0) << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Matched-budget CVNN vs FCN comparison on a radial target.
// ---------------------------------------------------------------------------

/// FCN width whose real-parameter count is closest to the CVNN's at width m.
inline int matched_fcn_width(int d, int cvnn_width) {
  long p = 2L * ((static_cast<long>(d) + 2) * cvnn_width + 1);
  long m = (p - 1 + (d + 2) / 2) / (d + 2);
  return static_cast<int>(std::max(1L, m));
}

struct MatchedCell {
  int cvnn_width = 0, fcn_width = 0;
  long cvnn_params = 0, fcn_params = 0;
  std::uint64_t seed = 0;
  double cvnn_mse = 0.0, fcn_mse = 0.0;
  bool valid = false;
};

struct MatchedCompare {
  std::vector<MatchedCell> cells;
  double fraction_cvnn_wins = 0.0;
};

inline MatchedCompare matched_budget_compare(const tgt::RadialTarget& target,
                                             const std::vector<int>& cvnn_widths,
                                             const std::vector<std::uint64_t>& seeds,
                                             const SweepConfig& cfg) {
  MatchedCompare out;
  out.cells.resize(cvnn_widths.size() * seeds.size());
  parallel_cells(out.cells.size(), [&](std::size_t idx) {
    std::size_t wi = idx / seeds.size(), si = idx % seeds.size();
    MatchedCell cell;
    cell.cvnn_width = cvnn_widths[wi];
    cell.fcn_width = matched_fcn_width(target.d, cvnn_widths[wi]);
    cell.seed = seeds[si];
    SweepCell a = run_sweep_cell(target, Arch::cvnn, cell.cvnn_width, seeds[si], cfg);
    SweepCell b = run_sweep_cell(target, Arch::fcn, cell.fcn_width, seeds[si], cfg);
    cell.cvnn_params = a.params;
    cell.fcn_params = b.params;
    cell.cvnn_mse = a.test_mse;
    cell.fcn_mse = b.test_mse;
    cell.valid = a.valid && b.valid;
    out.cells[idx] = cell;
  });
  int wins = 0, valid = 0;
  for (const auto& c : out.cells) {
    if (!c.valid) continue;
    ++valid;
    if (c.cvnn_mse < c.fcn_mse) ++wins;
  }
  out.fraction_cvnn_wins = valid ? static_cast<double>(wins) / valid : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Shift-invariance experiment: circular CNN vs FCN on the translation target.
// ---------------------------------------------------------------------------

/// x = r u + c 1 where u is a unit vector in the mean-zero subspace, so the
/// shift feature ||x - mean(x) 1|| equals r exactly.
inline RVec sample_shift_point(int d, double r_lo, double r_hi, rng::Stream& stream) {
  double r = stream.uniform(r_lo, r_hi);
  double c = stream.normal();
  RVec u;
  double norm = 0.0;
  do {
    auto dir = stream.sphere(static_cast<std::size_t>(d));
    u = Eigen::Map<RVec>(dir.data(), d);
    u.array() -= u.mean();
    norm = u.norm();
  } while (norm < 1e-12);
  u /= norm;
  return r * u + RVec::Constant(d, c);
}

inline RealBatch make_shift_dataset(const tgt::RadialTarget& bands, int n, double margin,
                                    rng::Stream& stream) {
  RealBatch batch;
  batch.x.resize(n, bands.d);
  batch.y.resize(n);
  double lo = bands.shell_lo() * (1.0 - margin);
  double hi = bands.shell_hi() * (1.0 + margin);
  for (int i = 0; i < n; ++i) {
    RVec x = sample_shift_point(bands.d, lo, hi, stream);
    batch.x.row(i) = x.transpose();
    batch.y[i] = eval_translation_target(bands, x);
  }
  return batch;
}

/// Append all circular shifts of every row (targets unchanged).
inline RealBatch augment_with_shifts(const RealBatch& batch) {
  const int d = static_cast<int>(batch.x.cols());
  RealBatch out;
  out.x.resize(batch.x.rows() * d, d);
  out.y.resize(batch.y.size() * d);
  for (Eigen::Index i = 0; i < batch.x.rows(); ++i)
    for (int s = 0; s < d; ++s) {
      for (int j = 0; j < d; ++j) out.x(i * d + s, j) = batch.x(i, (j + s) % d);
      out.y[i * d + s] = batch.y[i];
    }
  return out;
}

struct ShiftCell {
  int filter_len = 0, fcn_width = 0;
  long cnn_params = 0, fcn_params = 0;
  std::uint64_t seed = 0;
  double cnn_mse = 0.0, fcn_mse = 0.0;
  double invariance_defect = 0.0;  // max |f(shift x) - f(x)| over test points
  bool valid = false;
};

struct ShiftCompare {
  std::vector<ShiftCell> cells;
  double fraction_cnn_wins = 0.0;
  double max_invariance_defect = 0.0;
};

inline ShiftCompare cnn_shift_compare(const tgt::RadialTarget& bands,
                                      const std::vector<int>& filter_lens,
                                      const std::vector<int>& fcn_widths,
                                      const std::vector<std::uint64_t>& seeds,
                                      const SweepConfig& cfg, double margin = 0.05) {
  if (filter_lens.size() != fcn_widths.size())
    throw ContractError("cnn_shift_compare: budget lists must pair up");
  ShiftCompare out;
  out.cells.resize(filter_lens.size() * seeds.size());
  parallel_cells(out.cells.size(), [&](std::size_t idx) {
    std::size_t bi = idx / seeds.size(), si = idx % seeds.size();
    ShiftCell cell;
    cell.filter_len = filter_lens[bi];
    cell.fcn_width = fcn_widths[bi];
    cell.seed = seeds[si];
    auto data_stream = rng::split(seeds[si], 0x5F1F7);
    RealBatch train_set = make_shift_dataset(bands, cfg.n_train, margin, data_stream);
    RealBatch test_raw = make_shift_dataset(bands, cfg.n_test, margin, data_stream);
    RealBatch test_set = augment_with_shifts(test_raw);
    auto init_a = rng::split(seeds[si] ^ (0xC44ULL * (bi + 1)), 0xA);
    auto init_b = rng::split(seeds[si] ^ (0xFC9ULL * (bi + 1)), 0xB);
    try {
      CNN1D cnn = CNN1D::init(bands.d, cell.filter_len, init_a, Pooling::mean,
                              /*circular=*/true, Activation::relu);
      FCN fcn = FCN::init(bands.d, cell.fcn_width, init_b, Activation::relu);
      cell.cnn_params = cnn.param_count();
      cell.fcn_params = fcn.param_count();
      train(cnn, train_set, cfg.train);
      train(fcn, train_set, cfg.train);
      cell.cnn_mse = detail::test_mse([&](const RVec& x) { return cnn.forward(x); }, test_set);
      cell.fcn_mse = detail::test_mse([&](const RVec& x) { return fcn.forward(x); }, test_set);
      // exact circular shift invariance of the trained conv-pool network
      for (Eigen::Index i = 0; i < std::min<Eigen::Index>(test_raw.x.rows(), 32); ++i) {
        RVec x = test_raw.x.row(i).transpose();
        double base = cnn.forward(x);
        for (int s = 1; s < bands.d; ++s) {
          RVec xs(bands.d);
          for (int j = 0; j < bands.d; ++j) xs[j] = x[(j + s) % bands.d];
          cell.invariance_defect =
              std::max(cell.invariance_defect, std::abs(cnn.forward(xs) - base));
        }
      }
      cell.valid = true;
    } catch (const TrainingDivergence&) {
      cell.valid = false;
    }
    out.cells[idx] = cell;
  });
  int wins = 0, valid = 0;
  for (const auto& c : out.cells) {
    if (!c.valid) continue;
    ++valid;
    if (c.cnn_mse < c.fcn_mse) ++wins;
    out.max_invariance_defect = std::max(out.max_invariance_defect, c.invariance_defect);
  }
  out.fraction_cnn_wins = valid ? static_cast<double>(wins) / valid : 0.0;
  return out;
}

}  // namespace invnets::net
