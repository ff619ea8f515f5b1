#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "reimts/data.hpp"
#include "reimts/orchestrator.hpp"
#include "reimts/params.hpp"

namespace reimts {

enum class LrSchedule { none, halve_after_3 };

inline const char* lr_schedule_name(LrSchedule s) {
    return s == LrSchedule::none ? "none" : "halve_after_3";
}

/// Training protocol: adaptive-moment updates, fixed learning-rate halving
/// after epoch 3 (the simplest member of the reference-library family,
/// disable via lr_schedule), early stopping on validation masked MSE.
struct TrainConfig {
    double learning_rate = 1e-3;
    int max_epochs = 300;
    int patience = 10;
    long batch_size = 32;
    LrSchedule lr_schedule = LrSchedule::halve_after_3;
    double gradient_clip = 0.0; // 0 disables clipping
    std::uint64_t seed = 2024;

    void validate() const {
        if (!(learning_rate >= 0)) throw std::invalid_argument("train: learning_rate < 0");
        if (max_epochs < 1) throw std::invalid_argument("train: max_epochs < 1");
        if (patience < 0 || patience >= max_epochs)
            throw std::invalid_argument("train: require 0 <= patience < max_epochs");
        if (batch_size < 1) throw std::invalid_argument("train: batch_size < 1");
        if (gradient_clip < 0) throw std::invalid_argument("train: gradient_clip < 0");
    }

    double lr_at_epoch(int epoch) const {
        if (lr_schedule == LrSchedule::none || epoch <= 3) return learning_rate;
        return learning_rate * std::pow(0.5, epoch - 3);
    }
};

/// Stop once the validation loss has failed to improve for more than
/// `patience` consecutive epochs. Ties keep the earlier checkpoint.
class EarlyStopper {
public:
    explicit EarlyStopper(int patience) : patience_(patience) {}

    /// Returns true when training should stop after this epoch.
    bool observe(double val_loss, int epoch) {
        if (val_loss < best_) {
            best_ = val_loss;
            best_epoch_ = epoch;
            bad_ = 0;
            return false;
        }
        ++bad_;
        return bad_ > patience_;
    }

    double best() const { return best_; }
    int best_epoch() const { return best_epoch_; }
    bool improved_at(int epoch) const { return best_epoch_ == epoch; }

private:
    int patience_;
    double best_ = std::numeric_limits<double>::infinity();
    int best_epoch_ = 0;
    int bad_ = 0;
};

/// Adam with bias correction; update order follows parameter registration
/// order, so runs are bit-reproducible.
class Adam {
public:
    Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamStore& store, const std::map<std::string, Tensor>& grads, double lr,
              double clip) {
        ++t_;
        double scale = 1.0;
        if (clip > 0.0) {
            double sq = 0.0;
            for (const auto& [name, g] : grads)
                for (long i = 0; i < g.numel(); ++i) sq += g[i] * g[i];
            double norm = std::sqrt(sq);
            if (norm > clip) scale = clip / norm;
        }
        double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t e = 0; e < store.size(); ++e) {
            auto& [name, param] = store.entry(e);
            auto it = grads.find(name);
            if (it == grads.end()) continue;
            Tensor& m = state_m_.try_emplace(name, Tensor(param.shape())).first->second;
            Tensor& v = state_v_.try_emplace(name, Tensor(param.shape())).first->second;
            const Tensor& g = it->second;
            for (long i = 0; i < param.numel(); ++i) {
                double gi = g[i] * scale;
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
                double mhat = m[i] / bc1;
                double vhat = v[i] / bc2;
                param[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

private:
    double beta1_, beta2_, eps_;
    long t_ = 0;
    std::map<std::string, Tensor> state_m_, state_v_;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
    double wall_seconds = 0.0;
};

struct FitResult {
    ParamStore best_params;
    double best_val_loss = 0.0;
    int best_epoch = 0;
    int epochs_run = 0;
    bool early_stopped = false;
    long optimizer_steps = 0;
    double wall_seconds_total = 0.0;
    double seconds_per_iteration = 0.0;
    std::vector<EpochRecord> history;
};

struct Metrics {
    double mse = 0.0;
    double mae = 0.0;
    long query_count = 0;
};

/// Masked metrics over every query position of the split (global mean, not
/// per-sample mean).
inline Metrics evaluate(const ReimtsConfig& cfg, const ParamStore& store,
                        const SplitData& split) {
    if (split.samples.empty()) throw std::invalid_argument("evaluate: empty split");
    double sq = 0.0, ab = 0.0;
    long count = 0;
    for (const auto& s : split.samples) {
        ad::Tape tape;
        BoundParams params(tape, store);
        ForwardResult res = forward(tape, params, cfg, s.aligned, s.query);
        const Tensor& pred = res.predictions.val();
        for (long i = 0; i < pred.numel(); ++i) {
            if (s.query.query_mask[i] != 1.0) continue;
            double err = pred[i] - s.query.truth_values[i];
            sq += err * err;
            ab += std::abs(err);
            ++count;
        }
    }
    if (count == 0) throw std::invalid_argument("evaluate: split carries no forecast targets");
    return {sq / static_cast<double>(count), ab / static_cast<double>(count), count};
}

inline double validation_loss(const ReimtsConfig& cfg, const ParamStore& store,
                              const SplitData& split) {
    return evaluate(cfg, store, split).mse;
}

/// Gradient training with early stopping; returns the best-validation
/// checkpoint and the per-epoch history. Deterministic given the config and
/// seed: parameter init, batch order and evaluation all run single-threaded
/// from per-purpose seed streams.
inline FitResult fit(const ReimtsConfig& cfg, ParamStore store, const SplitData& train,
                     const SplitData& val, const TrainConfig& tc) {
    tc.validate();
    if (train.samples.empty() || val.samples.empty())
        throw std::invalid_argument("fit: train and validation splits must be non-empty");

    auto batches = make_padded_batches(train, tc.batch_size);
    Rng order_rng(derive_seed(tc.seed, 0x02DE)); // data-order stream
    Adam adam;
    EarlyStopper stopper(tc.patience);

    FitResult result;
    result.best_params = store;
    auto t_start = std::chrono::steady_clock::now();

    std::vector<std::size_t> order(batches.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
        auto e_start = std::chrono::steady_clock::now();
        double lr = tc.lr_at_epoch(epoch);
        order_rng.shuffle(order);

        double epoch_sq = 0.0;
        long epoch_yq = 0;
        for (std::size_t bi = 0; bi < order.size(); ++bi) {
            const auto& batch = batches[order[bi]];
            std::map<std::string, Tensor> grad_accum;
            double batch_sq = 0.0;
            long batch_yq = 0;
            for (const auto& s : batch) {
                ad::Tape tape;
                BoundParams params(tape, store);
                ForwardResult res = forward(tape, params, cfg, s.aligned, s.query);
                ad::Var sq_sum = masked_sq_err_sum(tape, res.predictions, s.query);
                batch_sq += sq_sum.val()[0];
                batch_yq += s.query.query_count();
                tape.backward(sq_sum);
                for (auto& [name, g] : params.gradients()) {
                    auto it = grad_accum.try_emplace(name, Tensor(g.shape())).first;
                    for (long i = 0; i < g.numel(); ++i) it->second[i] += g[i];
                }
            }
            if (batch_yq == 0) continue;
            if (!std::isfinite(batch_sq))
                throw std::runtime_error("fit: non-finite loss at epoch " +
                                         std::to_string(epoch) + ", batch " +
                                         std::to_string(bi));
            double inv = 1.0 / static_cast<double>(batch_yq);
            for (auto& [name, g] : grad_accum)
                for (long i = 0; i < g.numel(); ++i) g[i] *= inv;
            adam.step(store, grad_accum, lr, tc.gradient_clip);
            ++result.optimizer_steps;
            epoch_sq += batch_sq;
            epoch_yq += batch_yq;
        }

        double train_loss = epoch_yq > 0 ? epoch_sq / static_cast<double>(epoch_yq) : 0.0;
        double val_loss = validation_loss(cfg, store, val);
        if (!std::isfinite(val_loss))
            throw std::runtime_error("fit: non-finite validation loss at epoch " +
                                     std::to_string(epoch));
        double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - e_start).count();
        result.history.push_back({epoch, train_loss, val_loss, lr, wall});
        result.epochs_run = epoch;

        bool stop = stopper.observe(val_loss, epoch);
        if (stopper.improved_at(epoch)) {
            result.best_params = store;
            result.best_val_loss = val_loss;
            result.best_epoch = epoch;
        }
        if (stop) {
            result.early_stopped = true;
            break;
        }
    }

    result.wall_seconds_total =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    result.seconds_per_iteration =
        result.optimizer_steps > 0
            ? result.wall_seconds_total / static_cast<double>(result.optimizer_steps)
            : 0.0;
    return result;
}

// ---------------------------------------------------------------------------
// Config serialization and checkpoints
// ---------------------------------------------------------------------------

inline constexpr const char* kCheckpointFormat = "reimts-checkpoint-1";

inline nlohmann::json config_to_json(const ReimtsConfig& cfg) {
    return nlohmann::json{
        {"periods", cfg.periods},
        {"backbone",
         {{"kind", rep_kind_name(cfg.backbone.kind)},
          {"hidden_dim", cfg.backbone.hidden_dim},
          {"num_layers", cfg.backbone.num_layers}}},
        {"decode_mode", decode_mode_name(cfg.decode_mode)},
        {"ablation", ablation_name(cfg.ablation)},
        {"alpha_mode", cfg.alpha_mode == AlphaMode::per_channel ? "per_channel" : "per_position"},
        {"num_variables", cfg.num_variables}};
}

inline RepKind rep_kind_from_name(const std::string& s) {
    if (s == "temporal") return RepKind::temporal;
    if (s == "variable") return RepKind::variable;
    if (s == "observation") return RepKind::observation;
    throw std::invalid_argument("unknown backbone kind '" + s + "'");
}

inline Ablation ablation_from_name(const std::string& s) {
    if (s == "full") return Ablation::full;
    if (s == "rp_sample") return Ablation::rp_sample;
    if (s == "rp_split") return Ablation::rp_split;
    if (s == "rp_iarf") return Ablation::rp_iarf;
    if (s == "wo_iarf") return Ablation::wo_iarf;
    throw std::invalid_argument("unknown ablation '" + s + "'");
}

inline ReimtsConfig config_from_json(const nlohmann::json& j) {
    ReimtsConfig cfg;
    cfg.periods = j.at("periods").get<std::vector<double>>();
    cfg.backbone.kind = rep_kind_from_name(j.at("backbone").at("kind").get<std::string>());
    cfg.backbone.hidden_dim = j.at("backbone").at("hidden_dim").get<long>();
    cfg.backbone.num_layers = j.at("backbone").at("num_layers").get<int>();
    cfg.decode_mode = j.at("decode_mode").get<std::string>() == "concat"
                          ? DecodeMode::concat_all_levels
                          : DecodeMode::lowest_level_only;
    cfg.ablation = ablation_from_name(j.at("ablation").get<std::string>());
    cfg.alpha_mode = j.at("alpha_mode").get<std::string>() == "per_channel"
                         ? AlphaMode::per_channel
                         : AlphaMode::per_position;
    cfg.num_variables = j.at("num_variables").get<long>();
    return cfg;
}

/// Self-describing checkpoint: format tag, config echo, parameter blobs
/// keyed by module path. JSON doubles are printed shortest-round-trip, so
/// save -> load -> evaluate is bit-identical.
inline void save_checkpoint(const std::string& path, const ReimtsConfig& cfg,
                            const ParamStore& store) {
    nlohmann::json j;
    j["format"] = kCheckpointFormat;
    j["config"] = config_to_json(cfg);
    nlohmann::json params = nlohmann::json::object();
    for (std::size_t e = 0; e < store.size(); ++e) {
        const auto& [name, tensor] = store.entry(e);
        params[name] = {{"shape", tensor.shape()}, {"data", tensor.raw()}};
    }
    j["params"] = std::move(params);
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw std::runtime_error("save_checkpoint: cannot open " + tmp);
        out << j.dump(1) << "\n";
        if (!out) throw std::runtime_error("save_checkpoint: write failed for " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw std::runtime_error("save_checkpoint: rename to " + path + " failed");
}

struct Checkpoint {
    ReimtsConfig config;
    ParamStore params;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    nlohmann::json j = nlohmann::json::parse(in);
    if (j.at("format").get<std::string>() != kCheckpointFormat)
        throw std::runtime_error("load_checkpoint: unknown format tag in " + path);
    Checkpoint ck;
    ck.config = config_from_json(j.at("config"));
    // Parameter order must match make_model_params; rebuild it and fill.
    ck.params = make_model_params(ck.config, 0);
    for (std::size_t e = 0; e < ck.params.size(); ++e) {
        auto& [name, tensor] = ck.params.entry(e);
        const auto& pj = j.at("params").at(name);
        auto shape = pj.at("shape").get<std::vector<long>>();
        auto data = pj.at("data").get<std::vector<double>>();
        tensor = Tensor(shape, std::move(data));
    }
    return ck;
}

} // namespace reimts
