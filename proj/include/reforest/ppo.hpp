#pragma once

// PPO-Clip trainer: GAE, clipped surrogate with entropy bonus, linear LR
// decay, parameter sharing across all drones, optional forward-model
// curiosity bonus. Collection may fan out over parallel env workers;
// results are merged in worker order so threading never changes numbers.

#include <cmath>
#include <cstdlib>
#include <functional>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <vector>

#include "reforest/env.hpp"
#include "reforest/nn.hpp"
#include "reforest/obs.hpp"

namespace reforest::ppo {

struct PpoConfig {
    double gamma = 0.99;
    double lambda = 0.95;
    double epsilon = 0.2;
    double beta = 0.005;  // entropy bonus
    double learning_rate = 3e-4;
    bool lr_linear_decay = true;
    int num_epochs = 3;
    int batch_size = 1024;
    int buffer_size = 10240;
    int time_horizon = 100;
    long max_steps = 10'000'000;
    double extrinsic_strength = 0.9;
    bool curiosity_enabled = false;
    double curiosity_strength = 0.1;
    int curiosity_encoding = 256;
    double curiosity_learning_rate = 3e-4;
    double value_coef = 0.5;
    long summary_freq = 20000;
    int keep_checkpoints = 5;
    int num_workers = 1;

    void validate() const {
        if (gamma <= 0.0 || gamma > 1.0) throw std::invalid_argument("gamma must be in (0,1]");
        if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("lambda must be in [0,1]");
        if (epsilon <= 0.0) throw std::invalid_argument("epsilon must be positive");
        if (buffer_size % batch_size != 0)
            throw std::invalid_argument("buffer_size must be a multiple of batch_size");
    }
};

struct LengthMismatch : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct NonFiniteLoss : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// delta_t = r_t + gamma*V_{t+1}*(1-done_t) - V_t
// A_t = delta_t + gamma*lambda*(1-done_t)*A_{t+1};  returns = A + V
inline std::pair<std::vector<double>, std::vector<double>> compute_gae(
    const std::vector<double>& rewards, const std::vector<double>& values,
    const std::vector<int>& dones, double bootstrap_value, double gamma, double lambda) {
    const std::size_t n = rewards.size();
    if (values.size() != n || dones.size() != n)
        throw LengthMismatch("compute_gae: array lengths differ");
    std::vector<double> adv(n), ret(n);
    double running = 0.0;
    for (std::size_t i = n; i-- > 0;) {
        const double v_next = (i + 1 < n) ? values[i + 1] : bootstrap_value;
        const double not_done = dones[i] ? 0.0 : 1.0;
        const double delta = rewards[i] + gamma * v_next * not_done - values[i];
        running = delta + gamma * lambda * not_done * running;
        adv[i] = running;
        ret[i] = adv[i] + values[i];
    }
    return {adv, ret};
}

// min(ratio*A, g(eps,A)) with g = (1+eps)A if A >= 0 else (1-eps)A
inline double clip_objective(double ratio, double advantage, double epsilon) {
    const double g = advantage >= 0.0 ? (1.0 + epsilon) * advantage : (1.0 - epsilon) * advantage;
    return std::min(ratio * advantage, g);
}

// --- curiosity: fixed random encoder + learned forward model -----------------

template <typename T>
class CuriosityModel {
public:
    CuriosityModel(int obs_dim, int action_dim, int encoding, std::uint64_t seed)
        : obs_dim_(obs_dim), action_dim_(action_dim), enc_(encoding) {
        Rng rng(seed ^ 0x43757269ull);
        proj_.assign(static_cast<std::size_t>(enc_) * obs_dim_, 0.0);
        const double s = std::sqrt(1.0 / obs_dim_);
        for (auto& v : proj_) v = rng.uniform(-s, s);
        const int hidden = enc_;
        w1_ = params_.add("fm1.w", {hidden, enc_ + action_dim_});
        b1_ = params_.add("fm1.b", {hidden});
        w2_ = params_.add("fm2.w", {enc_, hidden});
        b2_ = params_.add("fm2.b", {enc_});
        for (int idx : {w1_, w2_}) {
            auto& t = params_[idx];
            const double lim = std::sqrt(3.0 / t.shape[1]);
            for (T& v : t.data) v = static_cast<T>(rng.uniform(-lim, lim));
        }
    }

    std::vector<double> encode(const std::vector<double>& obs) const {
        std::vector<double> e(enc_);
        for (int i = 0; i < enc_; ++i) {
            double acc = 0.0;
            for (int j = 0; j < obs_dim_; ++j) acc += proj_[i * obs_dim_ + j] * obs[j];
            e[i] = std::tanh(acc);
        }
        return e;
    }

    // squared prediction error of the next encoding, scaled by strength
    double intrinsic_reward(const std::vector<double>& enc, const std::vector<double>& action,
                            const std::vector<double>& enc_next, double strength) const {
        const auto pred = predict(enc, action);
        double err = 0.0;
        for (int i = 0; i < enc_; ++i) {
            const double d = pred[i] - enc_next[i];
            err += d * d;
        }
        return strength * err / enc_;
    }

    // one SGD-style minibatch on the forward model
    void train_batch(const std::vector<std::vector<double>>& enc,
                     const std::vector<std::vector<double>>& action,
                     const std::vector<std::vector<double>>& enc_next, double lr) {
        const int B = static_cast<int>(enc.size());
        nn::Tensor<T> in({B, enc_ + action_dim_});
        nn::Tensor<T> tgt({B, enc_});
        for (int b = 0; b < B; ++b) {
            for (int i = 0; i < enc_; ++i) in.data[b * (enc_ + action_dim_) + i] = static_cast<T>(enc[b][i]);
            for (int i = 0; i < action_dim_; ++i)
                in.data[b * (enc_ + action_dim_) + enc_ + i] = static_cast<T>(action[b][i]);
            for (int i = 0; i < enc_; ++i) tgt.data[b * enc_ + i] = static_cast<T>(enc_next[b][i]);
        }
        auto x = nn::constant(std::move(in));
        auto vw1 = nn::make_var(params_[w1_], true);
        auto vb1 = nn::make_var(params_[b1_], true);
        auto vw2 = nn::make_var(params_[w2_], true);
        auto vb2 = nn::make_var(params_[b2_], true);
        auto h = nn::relu(nn::dense(x, vw1, vb1));
        auto pred = nn::dense(h, vw2, vb2);
        auto loss = nn::mean_all(nn::square(nn::sub_const(pred, tgt)));
        nn::backward(loss);
        std::vector<nn::Tensor<T>> grads;
        for (auto* v : {&vw1, &vb1, &vw2, &vb2}) grads.push_back((*v)->grad);
        const int idxs[4] = {w1_, b1_, w2_, b2_};
        for (int k = 0; k < 4; ++k) {
            auto& p = params_[idxs[k]];
            for (std::size_t j = 0; j < p.size(); ++j)
                p.data[j] -= static_cast<T>(lr) * grads[k].data[j];
        }
    }

    int encoding_size() const { return enc_; }

private:
    std::vector<double> predict(const std::vector<double>& enc,
                                const std::vector<double>& action) const {
        const int hidden = params_[b1_].shape[0];
        std::vector<double> h(hidden), out(enc_);
        const auto& w1 = params_[w1_];
        const auto& b1 = params_[b1_];
        for (int i = 0; i < hidden; ++i) {
            double acc = static_cast<double>(b1.data[i]);
            for (int j = 0; j < enc_; ++j)
                acc += static_cast<double>(w1.data[i * (enc_ + action_dim_) + j]) * enc[j];
            for (int j = 0; j < action_dim_; ++j)
                acc += static_cast<double>(w1.data[i * (enc_ + action_dim_) + enc_ + j]) * action[j];
            h[i] = std::max(acc, 0.0);
        }
        const auto& w2 = params_[w2_];
        const auto& b2 = params_[b2_];
        for (int i = 0; i < enc_; ++i) {
            double acc = static_cast<double>(b2.data[i]);
            for (int j = 0; j < hidden; ++j)
                acc += static_cast<double>(w2.data[i * hidden + j]) * h[j];
            out[i] = acc;
        }
        return out;
    }

    int obs_dim_, action_dim_, enc_;
    std::vector<double> proj_;  // fixed random encoder
    nn::ParamStore<T> params_;
    int w1_, b1_, w2_, b2_;
};

// --- rollout storage --------------------------------------------------------

struct FlatBuffer {
    int obs_dim = 0;
    std::vector<double> obs;  // row-major
    std::vector<std::array<double, 3>> cont_raw;
    std::vector<std::array<int, 2>> disc;
    std::vector<double> logp_old, adv, ret;
    std::vector<std::vector<double>> enc, enc_next;  // curiosity only

    std::size_t size() const { return logp_old.size(); }
    void clear() {
        obs.clear();
        cont_raw.clear();
        disc.clear();
        logp_old.clear();
        adv.clear();
        ret.clear();
        enc.clear();
        enc_next.clear();
    }
};

// Per-agent trajectory segment; advantages are computed at flush time so
// segments never mix agents.
struct Segment {
    std::vector<double> obs;  // row-major
    std::vector<std::array<double, 3>> cont_raw;
    std::vector<std::array<int, 2>> disc;
    std::vector<double> logp, value, reward;
    std::vector<int> done;
    std::vector<std::vector<double>> enc, enc_next;

    std::size_t size() const { return reward.size(); }
    void clear() {
        obs.clear();
        cont_raw.clear();
        disc.clear();
        logp.clear();
        value.clear();
        reward.clear();
        done.clear();
        enc.clear();
        enc_next.clear();
    }
};

inline void flush_segment(Segment& seg, double bootstrap_value, const PpoConfig& cfg,
                          FlatBuffer& out, int obs_dim) {
    if (seg.size() == 0) return;
    auto [adv, ret] =
        compute_gae(seg.reward, seg.value, seg.done, bootstrap_value, cfg.gamma, cfg.lambda);
    out.obs_dim = obs_dim;
    out.obs.insert(out.obs.end(), seg.obs.begin(), seg.obs.end());
    out.cont_raw.insert(out.cont_raw.end(), seg.cont_raw.begin(), seg.cont_raw.end());
    out.disc.insert(out.disc.end(), seg.disc.begin(), seg.disc.end());
    out.logp_old.insert(out.logp_old.end(), seg.logp.begin(), seg.logp.end());
    out.adv.insert(out.adv.end(), adv.begin(), adv.end());
    out.ret.insert(out.ret.end(), ret.begin(), ret.end());
    out.enc.insert(out.enc.end(), seg.enc.begin(), seg.enc.end());
    out.enc_next.insert(out.enc_next.end(), seg.enc_next.begin(), seg.enc_next.end());
    seg.clear();
}

struct TrainStats {
    long step = 0;
    double mean_ratio = 1.0;
    double clip_fraction = 0.0;
    double policy_loss = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
    double learning_rate = 0.0;
};

struct EpisodeMetrics {
    long step = 0;
    double cumulative_reward = 0.0;   // mean per agent, extrinsic
    double distance_reward = 0.0;     // return-shaping total
    double tree_drop_reward = 0.0;
    long tree_drop_count = 0;
    long out_of_energy_count = 0;
    long recharge_count = 0;
};

// --- trainer ----------------------------------------------------------------

using EnvFactory = std::function<Env(long episode_index, int worker_index)>;

template <typename T>
class Trainer {
public:
    Trainer(nn::PolicyConfig net_cfg, PpoConfig cfg, EnvFactory factory, ObsLayout layout,
            std::uint64_t seed)
        : cfg_(cfg), net_(net_cfg), factory_(std::move(factory)), layout_(layout), seed_(seed) {
        cfg_.validate();
        update_rng_ = Rng(hash_combine(seed, 777));
        Rng init_rng(seed);
        net_.init(init_rng);
        const bool with_visual = net_cfg.use_visual;
        for (int w = 0; w < cfg_.num_workers; ++w) {
            workers_.emplace_back(Worker{
                factory_(next_episode_++, w),
                ObsStacker(0, layout, with_visual),
                Rng(hash_combine(seed, 1000 + w)),
            });
            auto& wk = workers_.back();
            wk.stacker = ObsStacker(wk.env.config().n_drones, layout, with_visual);
            wk.segments.resize(wk.env.config().n_drones);
            wk.pending_flush.assign(wk.env.config().n_drones, false);
            wk.episode_reward.assign(wk.env.config().n_drones, 0.0);
        }
        if (cfg_.curiosity_enabled)
            curiosity_ = std::make_unique<CuriosityModel<T>>(net_.input_dim(), 5,
                                                             cfg_.curiosity_encoding, seed);
    }

    // One collection sweep filling the buffer, then one PPO update.
    TrainStats train_iteration() {
        collect();
        TrainStats st = update();
        buffer_.clear();
        return st;
    }

    void collect() {
        const int quota = cfg_.buffer_size / cfg_.num_workers;
        int threads = 1;
        if (const char* tv = std::getenv("REFOREST_THREADS")) threads = std::max(1, std::atoi(tv));
        threads = std::min<int>(threads, cfg_.num_workers);
        std::vector<FlatBuffer> parts(workers_.size());
        if (threads <= 1) {
            for (std::size_t w = 0; w < workers_.size(); ++w)
                collect_worker(static_cast<int>(w), quota, parts[w]);
        } else {
            std::vector<std::thread> pool;
            std::size_t next = 0;
            for (int t = 0; t < threads; ++t)
                pool.emplace_back([&, t] {
                    for (std::size_t w = t; w < workers_.size(); w += threads)
                        collect_worker(static_cast<int>(w), quota, parts[w]);
                });
            for (auto& th : pool) th.join();
            (void)next;
        }
        for (auto& p : parts) {
            buffer_.obs_dim = p.obs_dim;
            buffer_.obs.insert(buffer_.obs.end(), p.obs.begin(), p.obs.end());
            buffer_.cont_raw.insert(buffer_.cont_raw.end(), p.cont_raw.begin(), p.cont_raw.end());
            buffer_.disc.insert(buffer_.disc.end(), p.disc.begin(), p.disc.end());
            buffer_.logp_old.insert(buffer_.logp_old.end(), p.logp_old.begin(), p.logp_old.end());
            buffer_.adv.insert(buffer_.adv.end(), p.adv.begin(), p.adv.end());
            buffer_.ret.insert(buffer_.ret.end(), p.ret.begin(), p.ret.end());
            buffer_.enc.insert(buffer_.enc.end(), p.enc.begin(), p.enc.end());
            buffer_.enc_next.insert(buffer_.enc_next.end(), p.enc_next.begin(), p.enc_next.end());
        }
        total_steps_ += static_cast<long>(buffer_.size());
    }

    TrainStats update() {
        const int n = static_cast<int>(buffer_.size());
        if (n == 0) throw NonFiniteLoss("update called with empty buffer");
        const double lr = current_lr();
        TrainStats st;
        st.step = total_steps_;
        st.learning_rate = lr;
        const int obs_dim = buffer_.obs_dim;
        std::vector<int> order(n);
        for (int i = 0; i < n; ++i) order[i] = i;

        bool first_pass = true;
        double stat_ratio = 0.0, stat_clip = 0.0;
        int stat_count = 0;
        for (int epoch = 0; epoch < cfg_.num_epochs; ++epoch) {
            // Fisher-Yates with the trainer RNG
            for (int i = n - 1; i > 0; --i)
                std::swap(order[i], order[update_rng_.uniform_int(i + 1)]);
            for (int start = 0; start + cfg_.batch_size <= n; start += cfg_.batch_size) {
                const int B = cfg_.batch_size;
                std::vector<double> obs(static_cast<std::size_t>(B) * obs_dim);
                nn::Tensor<T> act({B, 3}), g_t({B}), adv_t({B}), lp_old({B}), ret_t({B, 1});
                std::vector<int> idx_b0(B), idx_b1(B);
                // advantage normalization per minibatch
                double amean = 0.0, asq = 0.0;
                for (int b = 0; b < B; ++b) amean += buffer_.adv[order[start + b]];
                amean /= B;
                for (int b = 0; b < B; ++b) {
                    const double d = buffer_.adv[order[start + b]] - amean;
                    asq += d * d;
                }
                const double astd = std::sqrt(asq / B) + 1e-8;

                for (int b = 0; b < B; ++b) {
                    const int i = order[start + b];
                    std::copy(buffer_.obs.begin() + static_cast<std::size_t>(i) * obs_dim,
                              buffer_.obs.begin() + static_cast<std::size_t>(i + 1) * obs_dim,
                              obs.begin() + static_cast<std::size_t>(b) * obs_dim);
                    for (int k = 0; k < 3; ++k)
                        act.data[b * 3 + k] = static_cast<T>(buffer_.cont_raw[i][k]);
                    idx_b0[b] = buffer_.disc[i][0];
                    idx_b1[b] = buffer_.disc[i][1];
                    const double a = (buffer_.adv[i] - amean) / astd;
                    adv_t.data[b] = static_cast<T>(a);
                    g_t.data[b] = static_cast<T>(a >= 0.0 ? (1.0 + cfg_.epsilon) * a
                                                          : (1.0 - cfg_.epsilon) * a);
                    lp_old.data[b] = static_cast<T>(buffer_.logp_old[i]);
                    ret_t.data[b] = static_cast<T>(buffer_.ret[i]);
                }

                auto out = net_.forward(obs, B);

                // Gaussian log-prob of the stored pre-clamp actions
                auto ls_b = nn::broadcast_rows(out.log_std, B);                    // [B,3]
                auto diff = nn::sub_const(out.means, act);                         // mu - a
                auto inv_sigma = nn::exp_(nn::scale(ls_b, -1.0));
                auto z = nn::mul(diff, inv_sigma);
                auto lp_mat = nn::add_scalar(nn::sub(nn::scale(nn::square(z), -0.5), ls_b),
                                             -0.5 * std::log(2.0 * M_PI));
                auto logp = nn::sum_cols(lp_mat);                                  // [B]

                std::array<nn::Var<T>, 2> lsm;
                lsm[0] = nn::log_softmax(out.branch_logits[0]);
                lsm[1] = nn::log_softmax(out.branch_logits[1]);
                logp = nn::add(logp, nn::gather_col(lsm[0], idx_b0));
                logp = nn::add(logp, nn::gather_col(lsm[1], idx_b1));

                auto ratio = nn::exp_(nn::sub_const(logp, lp_old));
                auto surr = nn::min_with(nn::mul_const(ratio, adv_t), g_t);
                auto policy_obj = nn::mean_all(surr);

                auto vdiff = nn::sub_const(out.value, ret_t);
                auto vloss = nn::mean_all(nn::square(vdiff));

                // entropy: state-independent Gaussian part + branch terms
                auto ent = nn::add_scalar(nn::scale(nn::mean_all(out.log_std), 3.0),
                                          1.5 * (1.0 + std::log(2.0 * M_PI)));
                for (int br = 0; br < 2; ++br)
                    ent = nn::add(ent, nn::scale(nn::mean_all(nn::mul(nn::exp_(lsm[br]), lsm[br])),
                                                 -2.0));

                auto loss = nn::add(nn::scale(policy_obj, -1.0),
                                    nn::scale(vloss, cfg_.value_coef));
                loss = nn::add(loss, nn::scale(ent, -cfg_.beta));

                if (!std::isfinite(static_cast<double>(loss->val.data[0])))
                    throw NonFiniteLoss("non-finite PPO loss");
                nn::backward(loss);
                std::vector<nn::Tensor<T>> grads;
                try {
                    grads = net_.collect_grads();
                } catch (const nn::NonFiniteGradient& e) {
                    throw NonFiniteLoss(e.what());
                }
                adam_.step(net_.params(), grads, lr);

                if (first_pass) {
                    for (int b = 0; b < B; ++b) {
                        const double r = static_cast<double>(ratio->val.data[b]);
                        stat_ratio += r;
                        if (r < 1.0 - cfg_.epsilon || r > 1.0 + cfg_.epsilon) stat_clip += 1.0;
                        stat_count += 1;
                    }
                    st.policy_loss = -static_cast<double>(policy_obj->val.data[0]);
                    st.value_loss = static_cast<double>(vloss->val.data[0]);
                    st.entropy = static_cast<double>(ent->val.data[0]);
                    first_pass = false;
                }
            }
        }
        if (stat_count > 0) {
            st.mean_ratio = stat_ratio / stat_count;
            st.clip_fraction = stat_clip / stat_count;
        }

        if (curiosity_ && !buffer_.enc.empty()) {
            // forward-model fitting on the same data
            std::vector<std::vector<double>> a(buffer_.size());
            for (std::size_t i = 0; i < buffer_.size(); ++i) {
                a[i] = {buffer_.cont_raw[i][0], buffer_.cont_raw[i][1], buffer_.cont_raw[i][2],
                        double(buffer_.disc[i][0]), double(buffer_.disc[i][1])};
            }
            curiosity_->train_batch(buffer_.enc, a, buffer_.enc_next,
                                    cfg_.curiosity_learning_rate);
        }
        return st;
    }

    double current_lr() const {
        if (!cfg_.lr_linear_decay) return cfg_.learning_rate;
        const double frac = std::max(0.0, 1.0 - double(total_steps_) / double(cfg_.max_steps));
        return cfg_.learning_rate * frac;
    }

    // Resets env workers and reseeds all RNG streams as a pure function of
    // (seed, total_steps) so a checkpoint fully captures trainer state.
    void reset_workers() {
        update_rng_ = Rng(hash_combine(hash_combine(seed_, 777),
                                       static_cast<std::uint64_t>(total_steps_)));
        for (std::size_t w = 0; w < workers_.size(); ++w) {
            auto& wk = workers_[w];
            wk.rng = Rng(hash_combine(hash_combine(seed_, 1000 + w),
                                      static_cast<std::uint64_t>(total_steps_)));
            wk.env = factory_(next_episode_++, static_cast<int>(w));
            wk.stacker.reset();
            for (auto& s : wk.segments) s.clear();
            std::fill(wk.pending_flush.begin(), wk.pending_flush.end(), false);
            std::fill(wk.episode_reward.begin(), wk.episode_reward.end(), 0.0);
            wk.episode_distance_reward = 0.0;
            wk.episode_drop_reward = 0.0;
        }
    }

    nn::PolicyNet<T>& net() { return net_; }
    nn::Adam<T>& optimizer() { return adam_; }
    long total_steps() const { return total_steps_; }
    void set_total_steps(long s) { total_steps_ = s; }
    long next_episode() const { return next_episode_; }
    void set_next_episode(long e) { next_episode_ = e; }
    Rng& collection_rng_state() { return workers_.front().rng; }
    const PpoConfig& config() const { return cfg_; }
    const std::vector<EpisodeMetrics>& episode_metrics() const { return episodes_; }
    ObsLayout layout() const { return layout_; }

private:
    struct Worker {
        Env env;
        ObsStacker stacker;
        Rng rng;
        std::vector<Segment> segments;
        std::vector<bool> pending_flush;
        std::vector<double> episode_reward;
        double episode_distance_reward = 0.0;
        double episode_drop_reward = 0.0;
    };

    void collect_worker(int widx, int quota, FlatBuffer& out) {
        auto& wk = workers_[widx];
        const int n_agents = wk.env.config().n_drones;
        const int obs_dim = net_.input_dim();
        int collected = 0;

        while (collected < quota) {
            // batch all agents into one forward
            std::vector<double> obs_batch(static_cast<std::size_t>(n_agents) * obs_dim);
            std::vector<StackedObs> obs_rows(n_agents);
            for (int a = 0; a < n_agents; ++a) {
                obs_rows[a] = wk.stacker.observe(a, wk.env.drones()[a], wk.env.scenario());
                std::copy(obs_rows[a].flat.begin(), obs_rows[a].flat.end(),
                          obs_batch.begin() + static_cast<std::size_t>(a) * obs_dim);
            }
            auto fwd = net_.forward(obs_batch, n_agents);

            // flush horizon-truncated segments with the fresh value estimates
            for (int a = 0; a < n_agents; ++a)
                if (wk.pending_flush[a]) {
                    flush_segment(wk.segments[a], net_.eval_row(fwd, a).value, cfg_, out, obs_dim);
                    wk.pending_flush[a] = false;
                }

            std::vector<Action> actions(n_agents);
            std::vector<nn::ActionSample> samples(n_agents);
            for (int a = 0; a < n_agents; ++a) {
                const auto e = net_.eval_row(fwd, a);
                samples[a] = nn::sample_action(e, wk.rng);
                actions[a].cont = samples[a].cont;
                actions[a].disc = samples[a].disc;
            }

            auto res = wk.env.step(actions);
            const bool done = wk.env.episode_done();

            for (int a = 0; a < n_agents; ++a) {
                const auto e = net_.eval_row(fwd, a);
                const double extrinsic = res.rewards[a].total();
                double reward = cfg_.extrinsic_strength * extrinsic;
                auto& seg = wk.segments[a];
                seg.obs.insert(seg.obs.end(), obs_rows[a].flat.begin(), obs_rows[a].flat.end());
                seg.cont_raw.push_back(samples[a].cont_raw);
                seg.disc.push_back(samples[a].disc);
                seg.logp.push_back(samples[a].log_prob);
                seg.value.push_back(e.value);
                if (curiosity_) {
                    auto enc = curiosity_->encode(obs_rows[a].flat);
                    auto next_row = wk.stacker.peek(a, wk.env.drones()[a], wk.env.scenario());
                    auto enc_next = curiosity_->encode(next_row.flat);
                    std::vector<double> av = {samples[a].cont_raw[0], samples[a].cont_raw[1],
                                              samples[a].cont_raw[2], double(samples[a].disc[0]),
                                              double(samples[a].disc[1])};
                    reward += curiosity_->intrinsic_reward(enc, av, enc_next,
                                                           cfg_.curiosity_strength);
                    seg.enc.push_back(std::move(enc));
                    seg.enc_next.push_back(std::move(enc_next));
                }
                seg.reward.push_back(reward);
                seg.done.push_back(done ? 1 : 0);
                wk.episode_reward[a] += extrinsic;
                wk.episode_distance_reward += res.rewards[a].return_reward;
                wk.episode_drop_reward += res.rewards[a].drop_reward;
                collected += 1;
            }

            if (done) {
                EpisodeMetrics em;
                em.step = total_steps_ + collected;
                double sum = 0.0;
                for (double r : wk.episode_reward) sum += r;
                em.cumulative_reward = sum / n_agents;
                em.distance_reward = wk.episode_distance_reward;
                em.tree_drop_reward = wk.episode_drop_reward;
                em.tree_drop_count = wk.env.counters().tree_drops;
                em.out_of_energy_count = wk.env.counters().out_of_energy;
                em.recharge_count = wk.env.counters().recharges;
                long episode_index;
                {
                    std::lock_guard<std::mutex> lk(shared_mutex_);
                    episodes_.push_back(em);
                    episode_index = next_episode_++;
                }
                for (int a = 0; a < n_agents; ++a)
                    flush_segment(wk.segments[a], 0.0, cfg_, out, obs_dim);
                wk.env = factory_(episode_index, widx);
                wk.stacker.reset();
                std::fill(wk.episode_reward.begin(), wk.episode_reward.end(), 0.0);
                wk.episode_distance_reward = 0.0;
                wk.episode_drop_reward = 0.0;
            } else {
                for (int a = 0; a < n_agents; ++a)
                    if (static_cast<int>(wk.segments[a].size()) >= cfg_.time_horizon)
                        wk.pending_flush[a] = true;
            }
        }

        // final flush with a bootstrap forward on the current observations
        bool any = false;
        for (int a = 0; a < n_agents; ++a) any |= wk.segments[a].size() > 0;
        if (any) {
            std::vector<double> obs_batch(static_cast<std::size_t>(n_agents) * obs_dim);
            for (int a = 0; a < n_agents; ++a) {
                auto row = wk.stacker.observe(a, wk.env.drones()[a], wk.env.scenario());
                std::copy(row.flat.begin(), row.flat.end(),
                          obs_batch.begin() + static_cast<std::size_t>(a) * obs_dim);
            }
            auto fwd = net_.forward(obs_batch, n_agents);
            for (int a = 0; a < n_agents; ++a)
                flush_segment(wk.segments[a], net_.eval_row(fwd, a).value, cfg_, out, obs_dim);
            std::fill(wk.pending_flush.begin(), wk.pending_flush.end(), false);
        }
    }

    PpoConfig cfg_;
    nn::PolicyNet<T> net_;
    nn::Adam<T> adam_;
    EnvFactory factory_;
    ObsLayout layout_;
    std::uint64_t seed_;
    std::vector<Worker> workers_;
    FlatBuffer buffer_;
    std::mutex shared_mutex_;
    Rng update_rng_{12345};
    std::unique_ptr<CuriosityModel<T>> curiosity_;
    std::vector<EpisodeMetrics> episodes_;
    long total_steps_ = 0;
    long next_episode_ = 0;
};

}  // namespace reforest::ppo
