#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "dukf/errors.hpp"
#include "dukf/numerics.hpp"
#include "dukf/rng.hpp"

namespace dukf {

/// Multiplicative fading on the sensing link.  theta ~ Rayleigh(sigma_theta)
/// with E[theta^2] = 2 sigma_theta^2; the receiver's channel estimate is
/// theta_hat = (1 + eps) * theta with eps a truncated normal on
/// [-delta_eps, delta_eps].
struct FadingParams {
  double sigma_theta = 0.5;
  double sigma_eps = 1.0;
  double delta_eps = 0.1;
};

struct FadingSample {
  double theta = 1.0;
  double eps = 0.0;
  double theta_hat = 1.0;
};

/// Radio parameters of the inter-node links (binary FSK with non-coherent
/// detection over the noise floor k_B * temperature * bit_rate).
struct ChannelParams {
  double gain_linear = 1e-15;       ///< path gain as a linear power ratio
  int packet_bits = 1000;
  double bit_rate_bps = 6000.0;
  double boltzmann_j_per_k = 1.38e-23;
  double temperature_k = 280.0;
};

inline double gain_db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

/// Draw one fading realization.  theta and eps come from separate streams so
/// that consumers of one cannot shift the other.
inline FadingSample sample_fading(const FadingParams& fp, RngStream& theta_rng,
                                  RngStream& eps_rng) {
  FadingSample out;
  out.theta = sample_rayleigh(fp.sigma_theta, theta_rng);
  out.eps = sample_truncated_normal(fp.sigma_eps, fp.delta_eps, eps_rng);
  out.theta_hat = (1.0 + out.eps) * out.theta;
  return out;
}

/// z = theta * y + n with n ~ N(0, r_n).  Consumes one draw per element.
inline double apply_fading(double y, const FadingSample& fs, double r_n,
                           RngStream& rng) {
  const double n = sample_std_normal(rng);
  return fs.theta * y + std::sqrt(r_n) * n;
}

inline Eigen::VectorXd apply_fading(const Eigen::VectorXd& y,
                                    const FadingSample& fs,
                                    const Eigen::MatrixXd& r_n,
                                    RngStream& rng) {
  Eigen::VectorXd n(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) n(i) = sample_std_normal(rng);
  return fs.theta * y + matrix_sqrt_psd(r_n) * n;
}

/// Covariance of the effective measurement noise seen through the fading
/// channel, as modeled by a receiver that only knows the channel statistics:
///   2 sigma_theta^2 E[eps^2] h h^T  +  2 sigma_theta^2 R_v  +  R_n
/// where h is the predicted noise-free measurement.  The first term is the
/// penalty for using an imperfect channel estimate.
inline Eigen::MatrixXd fading_noise_cov(const FadingParams& fp,
                                        const Eigen::MatrixXd& r_v,
                                        const Eigen::MatrixXd& r_n,
                                        const Eigen::VectorXd& h_vec) {
  const double theta_ms = 2.0 * fp.sigma_theta * fp.sigma_theta;
  const double eps_ms =
      truncated_normal_second_moment(fp.sigma_eps, fp.delta_eps);
  return theta_ms * eps_ms * (h_vec * h_vec.transpose()) + theta_ms * r_v +
         r_n;
}

inline double fading_noise_cov(const FadingParams& fp, double r_v, double r_n,
                               double h) {
  const double theta_ms = 2.0 * fp.sigma_theta * fp.sigma_theta;
  const double eps_ms =
      truncated_normal_second_moment(fp.sigma_eps, fp.delta_eps);
  return theta_ms * eps_ms * h * h + theta_ms * r_v + r_n;
}

/// Bit error rate of non-coherent BFSK at the given peak transmit power:
///   Q( u * g / (r * k_B * T) )
/// i.e. the upper tail of the standard normal at the receiver SNR.
inline double ber_bfsk(double peak_power_w, const ChannelParams& cp) {
  const double noise =
      cp.bit_rate_bps * cp.boltzmann_j_per_k * cp.temperature_k;
  const double snr = peak_power_w * cp.gain_linear / noise;
  return 0.5 * std::erfc(snr / std::sqrt(2.0));
}

/// Probability that an entire packet of `bits` bits survives independent bit
/// errors: (1 - ber)^bits, evaluated in log space for tiny error rates.
inline double packet_success_prob(double ber, int bits) {
  if (ber <= 0.0) return 1.0;
  if (ber >= 1.0) return 0.0;
  return std::exp(static_cast<double>(bits) * std::log1p(-ber));
}

inline double packet_success_prob(double peak_power_w,
                                  const ChannelParams& cp) {
  return packet_success_prob(ber_bfsk(peak_power_w, cp), cp.packet_bits);
}

/// Inverts packet_success_prob for the transmit power by bisection.  The map
/// is strictly increasing in power; throws NoBracket when the target is not
/// attainable inside [lo_w, hi_w].
inline double power_for_target_prob(double q_target, const ChannelParams& cp,
                                    double lo_w = 1e-6, double hi_w = 10.0) {
  if (!(q_target > 0.0 && q_target < 1.0)) {
    throw NoBracket("power_for_target_prob: target must lie strictly in (0,1)");
  }
  double f_lo = packet_success_prob(lo_w, cp) - q_target;
  double f_hi = packet_success_prob(hi_w, cp) - q_target;
  if (f_lo > 0.0 || f_hi < 0.0) {
    throw NoBracket("power_for_target_prob: target " +
                    std::to_string(q_target) +
                    " not bracketed by powers [" + std::to_string(lo_w) +
                    ", " + std::to_string(hi_w) + "] W");
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo_w + hi_w);
    const double f_mid = packet_success_prob(mid, cp) - q_target;
    if (f_mid >= 0.0) {
      hi_w = mid;
    } else {
      lo_w = mid;
    }
    if (hi_w - lo_w <= 1e-12 * std::max(1.0, hi_w)) break;
  }
  return 0.5 * (lo_w + hi_w);
}

/// Bernoulli packet delivery with success probability q.
inline int sample_link(double q, RngStream& rng) {
  return rng.bernoulli(q) ? 1 : 0;
}

/// Energy spent transmitting `bits` bits at peak power u: u * bits / rate.
inline double transmission_energy(double peak_power_w, int bits,
                                  double bit_rate_bps) {
  return peak_power_w * static_cast<double>(bits) / bit_rate_bps;
}

}  // namespace dukf
