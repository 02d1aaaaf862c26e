#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "raydepth/params.hpp"

namespace raydepth {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// Decoupled-weight-decay adaptive-moment optimizer. Weight decay acts on the
// weights directly (scaled by lr), independent of the adaptive term.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }
  long step_count() const { return step_; }
  void set_step_count(long s) { step_ = s; }
  long skipped_steps() const { return skipped_; }

  // Applies one update from the gradients currently stored on the parameters.
  // A non-finite gradient anywhere aborts the whole step (parameters and
  // moments untouched) and flags it; returns false in that case.
  bool step(ParameterRegistry<T>& params, double lr) {
    for (auto& [name, t] : params)
      for (T g : t.grad())
        if (!std::isfinite(double(g))) {
          ++skipped_;
          return false;
        }
    ++step_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));
    for (auto& [name, t] : params) {
      auto& state = moments_[name];
      if (state.m.size() != t.numel()) {
        state.m.assign(t.numel(), 0.0);
        state.v.assign(t.numel(), 0.0);
      }
      auto& values = t.raw_values();
      const auto& grad = t.grad();
      for (size_t i = 0; i < values.size(); ++i) {
        double g = double(grad[i]);
        state.m[i] = cfg_.beta1 * state.m[i] + (1.0 - cfg_.beta1) * g;
        state.v[i] = cfg_.beta2 * state.v[i] + (1.0 - cfg_.beta2) * g * g;
        double m_hat = state.m[i] / bc1;
        double v_hat = state.v[i] / bc2;
        double w = double(values[i]);
        w -= lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) + cfg_.weight_decay * w);
        values[i] = T(w);
      }
    }
    return true;
  }

  // Moments and the step counter as checkpoint entries (f64), so training can
  // resume exactly.
  std::vector<CheckpointEntry> state_entries() const {
    std::vector<CheckpointEntry> out;
    CheckpointEntry step;
    step.name = "opt.step";
    step.dtype = 1;
    step.shape = {1};
    step.f64 = {double(step_)};
    out.push_back(std::move(step));
    for (const auto& [name, s] : moments_) {
      CheckpointEntry m;
      m.name = "opt.m." + name;
      m.dtype = 1;
      m.shape = {int(s.m.size())};
      m.f64 = s.m;
      out.push_back(std::move(m));
      CheckpointEntry v;
      v.name = "opt.v." + name;
      v.dtype = 1;
      v.shape = {int(s.v.size())};
      v.f64 = s.v;
      out.push_back(std::move(v));
    }
    return out;
  }

  void load_state(const std::vector<CheckpointEntry>& entries) {
    for (const auto& e : entries) {
      if (e.name == "opt.step") {
        step_ = long(e.f64.at(0));
      } else if (e.name.rfind("opt.m.", 0) == 0) {
        moments_[e.name.substr(6)].m = e.f64;
      } else if (e.name.rfind("opt.v.", 0) == 0) {
        moments_[e.name.substr(6)].v = e.f64;
      }
    }
  }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamWConfig cfg_;
  std::map<std::string, Moments> moments_;
  long step_ = 0;
  long skipped_ = 0;
};

struct ScheduleConfig {
  double lr_init = 1e-5;
  double lr_base = 1e-4;
  int warmup_epochs = 1;
  double decay_gamma = 0.8;
  int decay_every = 5;  // epochs between decays after warmup
  int epochs = 30;
  int batch_size = 4;
  int query_stride = 8;

  void validate() const {
    if (!(lr_init > 0) || !(lr_base > 0)) throw std::invalid_argument("ScheduleConfig: learning rates must be > 0");
    if (!(decay_gamma > 0) || decay_gamma > 1) throw std::invalid_argument("ScheduleConfig: need 0 < gamma <= 1");
    if (decay_every < 1 || batch_size < 1 || query_stride < 1 || epochs < 0 || warmup_epochs < 0)
      throw std::invalid_argument("ScheduleConfig: counts must be positive");
  }
};

// Linear warmup from lr_init to lr_base across the warmup epochs, then a
// gamma decay once every decay_every epochs.
inline double lr_at(int epoch, int step_in_epoch, int steps_per_epoch, const ScheduleConfig& cfg) {
  if (epoch < cfg.warmup_epochs) {
    double total = double(cfg.warmup_epochs) * steps_per_epoch;
    double done = double(epoch) * steps_per_epoch + step_in_epoch;
    return cfg.lr_init + (cfg.lr_base - cfg.lr_init) * (done / total);
  }
  int decays = (epoch - cfg.warmup_epochs) / cfg.decay_every;
  return cfg.lr_base * std::pow(cfg.decay_gamma, double(decays));
}

}  // namespace raydepth
