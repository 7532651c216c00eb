#pragma once

#include "pmp/checkpoint.hpp"
#include "pmp/motion_data.hpp"
#include "pmp/nn.hpp"

#include <deque>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

namespace pmp {

inline constexpr double kLogSigmaMin = -5.0;
inline constexpr double kLogSigmaMax = 2.0;

struct CVAEConfig {
  int W = 50;   // frames per window (1 s at 50 Hz)
  int H = 64;   // latent size
  std::vector<int> hidden{256, 256};
  Activation activation = Activation::tanh;
  double kl_weight = 1.0;
  int epochs = 5;  // longer runs memorize the 25-clip synthetic set
  int batch_size = 64;
  double learning_rate = 1e-3;
  int stride = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (W < 1 || H < 1) throw ArgumentError("CVAE: W and H must be >= 1");
    if (kl_weight < 0.0) throw ArgumentError("CVAE: kl_weight must be >= 0");
    if (epochs < 1 || batch_size < 1 || stride < 1) throw ArgumentError("CVAE: epochs, batch_size, stride must be >= 1");
  }
};

struct GaussianParams {
  Vec mu;
  Vec log_sigma;
};

using LatentVector = Vec;

// Prior R(z | m0), encoder E(z | m0, m1), decoder D(m1 | z, m0). Windows are
// flattened frame-major: [frame0 joints..., frame1 joints..., ...].
struct CVAEModel {
  CVAEConfig config;
  int n_upper = 0;
  Mlp prior;
  Mlp encoder;
  Mlp decoder;

  int window_dim() const { return config.W * n_upper; }
};

inline CVAEModel make_cvae(const CVAEConfig& config, int n_upper) {
  config.validate();
  if (n_upper < 1) throw ArgumentError("CVAE: n_upper must be >= 1");
  const int d = config.W * n_upper;
  CVAEModel m;
  m.config = config;
  m.n_upper = n_upper;
  m.prior = mlp_init({d, 2 * config.H, config.hidden, config.activation}, config.seed * 3 + 1);
  m.encoder = mlp_init({2 * d, 2 * config.H, config.hidden, config.activation}, config.seed * 3 + 2);
  m.decoder = mlp_init({config.H + d, d, config.hidden, config.activation}, config.seed * 3 + 3);
  return m;
}

namespace detail {

inline Mat clamp_log_sigma(const Mat& raw) { return raw.cwiseMax(kLogSigmaMin).cwiseMin(kLogSigmaMax); }
inline Mat clamp_mask(const Mat& raw) {
  return raw.unaryExpr([](double v) { return (v > kLogSigmaMin && v < kLogSigmaMax) ? 1.0 : 0.0; });
}

inline GaussianParams split_gaussian(const Vec& out, int H) {
  return {out.head(H), clamp_log_sigma(out.tail(H))};
}

}  // namespace detail

inline GaussianParams prior_forward(const CVAEModel& m, const Vec& m0) {
  require_shape(m0.size() == m.window_dim(), "prior_forward: m0 length " + std::to_string(m0.size()) +
                                                  " != W*n_upper " + std::to_string(m.window_dim()));
  return detail::split_gaussian(mlp_apply(m.prior, m0), m.config.H);
}

inline GaussianParams encoder_forward(const CVAEModel& m, const Vec& m0, const Vec& m1) {
  require_shape(m0.size() == m.window_dim() && m1.size() == m.window_dim(), "encoder_forward: window length mismatch");
  Vec x(2 * m.window_dim());
  x << m0, m1;
  return detail::split_gaussian(mlp_apply(m.encoder, x), m.config.H);
}

inline Vec decoder_forward(const CVAEModel& m, const Vec& z, const Vec& m0) {
  require_shape(z.size() == m.config.H, "decoder_forward: z length mismatch");
  require_shape(m0.size() == m.window_dim(), "decoder_forward: m0 length mismatch");
  Vec x(m.config.H + m.window_dim());
  x << z, m0;
  return mlp_apply(m.decoder, x);
}

// KL(q || p) for diagonal Gaussians, in closed form.
inline double kl_diag_gaussians(const GaussianParams& q, const GaussianParams& p) {
  require_shape(q.mu.size() == p.mu.size() && q.log_sigma.size() == p.log_sigma.size() &&
                    q.mu.size() == q.log_sigma.size(),
                "kl_diag_gaussians: dimension mismatch");
  const auto var_q = (2.0 * q.log_sigma.array()).exp();
  const auto var_p = (2.0 * p.log_sigma.array()).exp();
  const auto dmu = q.mu.array() - p.mu.array();
  return (p.log_sigma.array() - q.log_sigma.array() + (var_q + dmu.square()) / (2.0 * var_p) - 0.5).sum();
}

struct ElboResult {
  double loss = 0.0;
  double recon = 0.0;
  double kl = 0.0;
  ParamStore prior_grad;
  ParamStore encoder_grad;
  ParamStore decoder_grad;
};

// Batched negative ELBO: mean over rows of MSE(D(z, m0), m1) + beta * KL(E || R),
// z = mu_E + sigma_E * noise. The prior is trained by the KL term only.
inline ElboResult elbo_loss_batch(const CVAEModel& m, const Mat& M0, const Mat& M1, const Mat& noise) {
  const int H = m.config.H, d = m.window_dim();
  const Eigen::Index B = M0.rows();
  require_shape(M0.cols() == d && M1.cols() == d && M1.rows() == B, "elbo_loss: window shape mismatch");
  require_shape(noise.rows() == B && noise.cols() == H, "elbo_loss: noise must be batch x H");
  const double beta = m.config.kl_weight;

  const auto pf = mlp_forward(m.prior, M0);
  Mat enc_in(B, 2 * d);
  enc_in << M0, M1;
  const auto ef = mlp_forward(m.encoder, enc_in);

  const Mat mu_p = pf.y.leftCols(H), raw_lp = pf.y.rightCols(H);
  const Mat mu_q = ef.y.leftCols(H), raw_lq = ef.y.rightCols(H);
  const Mat ls_p = detail::clamp_log_sigma(raw_lp), ls_q = detail::clamp_log_sigma(raw_lq);
  const Mat sig_q = ls_q.array().exp();
  const Mat var_p = (2.0 * ls_p.array()).exp();
  const Mat var_q = sig_q.array().square();
  const Mat dmu = mu_q - mu_p;
  const Mat z = mu_q + sig_q.cwiseProduct(noise);

  Mat dec_in(B, H + d);
  dec_in << z, M0;
  const auto df = mlp_forward(m.decoder, dec_in);
  const Mat resid = df.y - M1;

  const Vec recon_rows = resid.array().square().rowwise().sum() / static_cast<double>(d);
  const Mat kl_terms = (ls_p - ls_q).array() + (var_q.array() + dmu.array().square()) / (2.0 * var_p.array()) - 0.5;
  const Vec kl_rows = kl_terms.rowwise().sum();

  ElboResult r;
  r.recon = recon_rows.mean();
  r.kl = kl_rows.mean();
  r.loss = r.recon + beta * r.kl;

  const double inv_b = 1.0 / static_cast<double>(B);
  const Mat d_out = resid * (2.0 / (static_cast<double>(d) * static_cast<double>(B)));
  auto db = mlp_backward(m.decoder, df.tape, d_out);
  const Mat dz = db.dx.leftCols(H);

  const double k = beta * inv_b;
  Mat d_mu_q = k * dmu.cwiseQuotient(var_p) + dz;
  Mat d_ls_q = k * (var_q.cwiseQuotient(var_p).array() - 1.0).matrix() + dz.cwiseProduct(sig_q).cwiseProduct(noise);
  Mat d_mu_p = -k * dmu.cwiseQuotient(var_p);
  Mat d_ls_p = k * (1.0 - (var_q + dmu.cwiseAbs2()).cwiseQuotient(var_p).array()).matrix();
  d_ls_q = d_ls_q.cwiseProduct(detail::clamp_mask(raw_lq));
  d_ls_p = d_ls_p.cwiseProduct(detail::clamp_mask(raw_lp));

  Mat d_enc(B, 2 * H), d_pri(B, 2 * H);
  d_enc << d_mu_q, d_ls_q;
  d_pri << d_mu_p, d_ls_p;
  r.encoder_grad = mlp_backward(m.encoder, ef.tape, d_enc).grads;
  r.prior_grad = mlp_backward(m.prior, pf.tape, d_pri).grads;
  r.decoder_grad = std::move(db.grads);
  return r;
}

inline ElboResult elbo_loss(const CVAEModel& m, const Vec& m0, const Vec& m1, const Vec& noise) {
  return elbo_loss_batch(m, m0.transpose(), m1.transpose(), noise.transpose());
}

struct WindowBatch {
  Mat m0;  // pairs x (W * n_upper)
  Mat m1;
};

inline WindowBatch collect_pairs(const MotionDataset& ds, int W, int stride) {
  std::vector<Vec> a, b;
  for (const auto& clip : ds.clips)
    for (const auto& p : window_pairs(clip, W, stride)) {
      a.push_back(flatten(p.m0));
      b.push_back(flatten(p.m1));
    }
  WindowBatch out;
  if (a.empty()) return out;
  out.m0.resize(static_cast<Eigen::Index>(a.size()), a.front().size());
  out.m1.resize(static_cast<Eigen::Index>(b.size()), b.front().size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out.m0.row(static_cast<Eigen::Index>(i)) = a[i].transpose();
    out.m1.row(static_cast<Eigen::Index>(i)) = b[i].transpose();
  }
  return out;
}

// Mean squared reconstruction error using the encoder mean as the latent.
inline double reconstruction_mse(const CVAEModel& m, const WindowBatch& pairs) {
  const int H = m.config.H, d = m.window_dim();
  const Eigen::Index n = pairs.m0.rows();
  if (n == 0) throw DatasetError("reconstruction_mse: no window pairs");
  double total = 0.0;
  const Eigen::Index chunk = 512;
  for (Eigen::Index s = 0; s < n; s += chunk) {
    const Eigen::Index b = std::min(chunk, n - s);
    Mat enc_in(b, 2 * d);
    enc_in << pairs.m0.middleRows(s, b), pairs.m1.middleRows(s, b);
    const Mat mu = mlp_forward(m.encoder, enc_in).y.leftCols(H);
    Mat dec_in(b, H + d);
    dec_in << mu, pairs.m0.middleRows(s, b);
    total += (mlp_forward(m.decoder, dec_in).y - pairs.m1.middleRows(s, b)).squaredNorm();
  }
  return total / (static_cast<double>(n) * d);
}

struct CVAETrainResult {
  CVAEModel model;
  std::vector<double> loss_curve;   // per-epoch mean loss
  std::vector<double> recon_curve;  // per-epoch mean reconstruction term
  std::vector<double> kl_curve;
};

using CvaeEpochCallback = std::function<void(int epoch, const CVAEModel&, double loss)>;

inline CVAETrainResult train_cvae(const MotionDataset& ds, const CVAEConfig& config,
                                  const CvaeEpochCallback& on_epoch = {}) {
  config.validate();
  if (ds.joint_names.empty()) throw DatasetError("train_cvae: dataset has no joints");
  const int n_upper = static_cast<int>(ds.joint_names.size());
  const auto pairs = collect_pairs(ds, config.W, config.stride);
  if (pairs.m0.rows() == 0)
    throw DatasetError("train_cvae: no clip is long enough for two windows of " + std::to_string(config.W) + " frames");

  CVAETrainResult out{make_cvae(config, n_upper), {}, {}, {}};
  auto& model = out.model;
  const AdamConfig adam{config.learning_rate};
  auto st_p = make_optimizer(model.prior.params, adam);
  auto st_e = make_optimizer(model.encoder.params, adam);
  auto st_d = make_optimizer(model.decoder.params, adam);

  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ull);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::Index n = pairs.m0.rows();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const int d = model.window_dim();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0, sum_r = 0.0, sum_k = 0.0;
    for (Eigen::Index s = 0; s < n; s += config.batch_size) {
      const Eigen::Index b = std::min<Eigen::Index>(config.batch_size, n - s);
      Mat M0(b, d), M1(b, d), E(b, config.H);
      for (Eigen::Index i = 0; i < b; ++i) {
        M0.row(i) = pairs.m0.row(order[static_cast<std::size_t>(s + i)]);
        M1.row(i) = pairs.m1.row(order[static_cast<std::size_t>(s + i)]);
      }
      for (Eigen::Index i = 0; i < E.size(); ++i) E.data()[i] = normal(rng);
      auto r = elbo_loss_batch(model, M0, M1, E);
      if (!std::isfinite(r.loss)) throw TrainingError("train_cvae: non-finite loss at epoch " + std::to_string(epoch));
      optimizer_step(model.prior.params, r.prior_grad, st_p);
      optimizer_step(model.encoder.params, r.encoder_grad, st_e);
      optimizer_step(model.decoder.params, r.decoder_grad, st_d);
      sum += r.loss * static_cast<double>(b);
      sum_r += r.recon * static_cast<double>(b);
      sum_k += r.kl * static_cast<double>(b);
    }
    out.loss_curve.push_back(sum / static_cast<double>(n));
    out.recon_curve.push_back(sum_r / static_cast<double>(n));
    out.kl_curve.push_back(sum_k / static_cast<double>(n));
    if (on_epoch) on_epoch(epoch, model, out.loss_curve.back());
  }
  return out;
}

// The last W commanded upper-body targets, oldest first.
class TargetRing {
 public:
  TargetRing() = default;
  TargetRing(int W, const Vec& fill) { reset(W, fill); }

  void reset(int W, const Vec& fill) {
    frames_.assign(static_cast<std::size_t>(W), fill);
  }
  void push(const Vec& frame) {
    frames_.pop_front();
    frames_.push_back(frame);
  }
  int size() const { return static_cast<int>(frames_.size()); }
  const std::deque<Vec>& frames() const { return frames_; }
  Vec flattened() const {
    if (frames_.empty()) return Vec();
    const Eigen::Index d = frames_.front().size();
    Vec out(d * static_cast<Eigen::Index>(frames_.size()));
    Eigen::Index k = 0;
    for (const auto& f : frames_) {
      out.segment(k, d) = f;
      k += d;
    }
    return out;
  }

 private:
  std::deque<Vec> frames_;
};

// Runtime motion prior fed to the locomotion policy: the prior mean.
inline LatentVector pmp_latent(const CVAEModel& m, const TargetRing& ring) {
  require_shape(ring.size() == m.config.W, "pmp_latent: ring must hold exactly W frames");
  return prior_forward(m, ring.flattened()).mu;
}

// Sampling variant of pmp_latent, kept for experiments.
inline LatentVector pmp_latent_sample(const CVAEModel& m, const TargetRing& ring, const Vec& noise) {
  const auto g = prior_forward(m, TargetRing(ring).flattened());
  return gaussian_reparam_sample(g.mu, g.log_sigma, noise);
}

inline nlohmann::json cvae_meta(const CVAEModel& m) {
  return {{"kind", "cvae"},
          {"W", m.config.W},
          {"H", m.config.H},
          {"n_upper", m.n_upper},
          {"hidden", m.config.hidden},
          {"activation", activation_name(m.config.activation)},
          {"kl_weight", m.config.kl_weight}};
}

inline void save_cvae(const CVAEModel& m, const std::string& path) {
  ParamStore all;
  all.merge("prior.", m.prior.params);
  all.merge("encoder.", m.encoder.params);
  all.merge("decoder.", m.decoder.params);
  save_checkpoint(path, all, cvae_meta(m));
}

inline CVAEModel load_cvae(const std::string& path) {
  auto ck = load_checkpoint(path);
  const auto& meta = ck.meta;
  if (!meta.contains("kind") || meta.at("kind") != "cvae")
    throw CompatibilityError(path + ": not a CVAE checkpoint");
  CVAEConfig c;
  c.W = json_util::get<int>(meta, "W", path);
  c.H = json_util::get<int>(meta, "H", path);
  if (meta.contains("hidden")) c.hidden = meta.at("hidden").get<std::vector<int>>();
  if (meta.contains("activation")) c.activation = activation_from_name(meta.at("activation").get<std::string>());
  if (meta.contains("kl_weight")) c.kl_weight = meta.at("kl_weight").get<double>();
  const int n_upper = json_util::get<int>(meta, "n_upper", path);
  auto m = make_cvae(c, n_upper);
  auto load_net = [&](Mlp& net, const std::string& prefix) {
    auto p = ck.params.extract(prefix);
    if (!p.same_layout(net.params)) throw CompatibilityError(path + ": tensor layout of '" + prefix + "' does not match meta");
    net.params = std::move(p);
  };
  load_net(m.prior, "prior.");
  load_net(m.encoder, "encoder.");
  load_net(m.decoder, "decoder.");
  return m;
}

}  // namespace pmp
