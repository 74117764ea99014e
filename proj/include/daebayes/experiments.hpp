#pragma once

// Load-pulse experiments, synthetic PMU data, the inflated noise model and
// time-segment weights.

#include "daebayes/dae.hpp"
#include "daebayes/params.hpp"
#include "daebayes/rng.hpp"
#include "daebayes/types.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace daebayes {

/// Fit-grid sampling of the integration grid.
struct GridSpec {
    double horizon = 10.0;
    double dt = 0.01;
    int decim = 16;

    Index n_points() const { return static_cast<Index>(std::floor(horizon / dt / decim + 1e-9)) + 1; }
    double spacing() const { return dt * decim; }
    std::vector<double> times() const {
        std::vector<double> t;
        for (Index k = 0; k < n_points(); ++k) t.push_back(static_cast<double>(k) * spacing());
        return t;
    }
};

/// Three single-bus pulse trains (buses 5, 7, 9) and one alternating 5/9 train.
inline std::vector<PulseSchedule> default_experiments_ieee9() {
    auto train = [](std::initializer_list<Pulse> p) {
        PulseSchedule s;
        s.pulses = p;
        return s;
    };
    return {
        train({{4, 1.0, 0.40, 0.12}, {4, 4.5, 0.45, 0.18}}),
        train({{6, 1.0, 0.45, 0.10}, {6, 4.5, 0.40, 0.20}}),
        train({{8, 1.0, 0.42, 0.15}, {8, 4.5, 0.44, 0.08}}),
        train({{4, 1.0, 0.40, 0.22}, {8, 4.0, 0.45, 0.14}, {4, 7.0, 0.43, 0.12}}),
    };
}

/// Throws InvalidInput when a schedule breaks the excitation rules.
inline void validate_schedule(const PulseSchedule& s, const NetworkCase& c, double horizon) {
    for (std::size_t k = 0; k < s.pulses.size(); ++k) {
        const Pulse& p = s.pulses[k];
        if (p.bus < 0 || p.bus >= c.n_buses) throw InvalidInput("pulse bus out of range");
        const auto& load = c.loads[static_cast<std::size_t>(p.bus)];
        if (load.P == 0.0 && load.Q == 0.0) throw InvalidInput("pulse bus carries no load");
        if (!(p.amplitude > 0.0 && p.amplitude < 0.5)) throw InvalidInput("pulse amplitude must lie in (0, 0.5)");
        if (!(p.duration >= 0.2 && p.duration <= 1.0)) throw InvalidInput("pulse duration must lie in [0.2, 1.0] s");
        if (!(p.start >= 0.0 && p.start + p.duration <= horizon)) throw InvalidInput("pulse outside the horizon");
        if (k > 0 && p.start < s.pulses[k - 1].start + s.pulses[k - 1].duration)
            throw InvalidInput("pulses must be ordered and non-overlapping");
    }
}

struct PerturbationCaps {
    double M = 0.06, D = 0.10, r = 0.08, x = 0.08;

    double of(ParamClass c) const {
        switch (c) {
            case ParamClass::M: return M;
            case ParamClass::D: return D;
            case ParamClass::r: return r;
            case ParamClass::x: return x;
        }
        return 0.0;
    }
};

struct TruthSpec {
    ParamVector theta_true;
    PerturbationCaps caps;
    std::uint64_t seed = 0;
};

/// Table truths for the 9-bus generators.
inline ParamVector table_generator_truth_ieee9() {
    ParamVector p;
    p.M = Eigen::Vector3d(0.231, 0.066, 0.031);
    p.D = Eigen::Vector3d(1.958, 0.472, 0.194);
    return p;
}

/// Uniform multiplicative draw within the caps. When `generators` is given
/// its M and D are used instead of drawn ones.
inline TruthSpec draw_truth(const NetworkCase& c, std::uint64_t seed, const PerturbationCaps& caps = {},
                            const std::optional<ParamVector>& generators = std::nullopt) {
    const ParamLayout layout(c);
    const Vector nom = nominal_params(c).flat();
    Philox4x32 rng(seed, streams::kTruth);
    Vector t(nom.size());
    for (Index i = 0; i < nom.size(); ++i) {
        const double cap = caps.of(layout.class_of(i));
        t[i] = nom[i] * (1.0 + cap * (2.0 * rng.uniform() - 1.0));
    }
    TruthSpec spec;
    spec.theta_true = ParamVector::from_flat(t, layout.n_gen, layout.n_r, layout.n_x);
    if (generators) {
        spec.theta_true.M = generators->M;
        spec.theta_true.D = generators->D;
    }
    spec.caps = caps;
    spec.seed = seed;
    for (Index i = 0; i < nom.size(); ++i) {
        const double rel = spec.theta_true.flat()[i] / nom[i] - 1.0;
        if (std::abs(rel) > caps.of(layout.class_of(i)) + 1e-12)
            throw InvalidInput("truth parameter " + layout.names[static_cast<std::size_t>(i)] + " exceeds its cap");
    }
    return spec;
}

struct NoiseModel {
    double snr_db = 25.0;  // +inf disables noise
    double rho = 0.02;
    double kappa_volt = 5.0;
    double kappa_freq = 15.0;
    double sigma_floor = 1e-6;
};

struct WindowSpec {
    double inertia = 0.35;
    double damping = 1.2;
    double w_freq_M = 1.3;
    double w_freq_D = 1.2;
    double w_volt_Y = 1.2;
};

inline double sample_std(const Eigen::Ref<const Vector>& v) {
    if (v.size() < 2) return 0.0;
    const double m = v.mean();
    return std::sqrt((v.array() - m).square().sum() / static_cast<double>(v.size() - 1));
}

/// sigma_eff_j = kappa_j * sqrt(sigma_meas_j^2 + max(floor, rho * s_hat_j)^2).
inline Vector effective_sigma(const Matrix& clean, const Vector& meas_std, const ChannelLayout& ch,
                              const NoiseModel& nm) {
    if (clean.rows() != ch.size() || meas_std.size() != ch.size())
        throw InvalidInput("effective_sigma: channel dimension mismatch");
    if (nm.rho < 0.0 || nm.kappa_volt < 1.0 || nm.kappa_freq < 1.0 || !(nm.sigma_floor > 0.0))
        throw InvalidInput("effective_sigma: need rho >= 0, kappa >= 1, floor > 0");
    Vector s(ch.size());
    for (Index j = 0; j < ch.size(); ++j) {
        const double s_hat = sample_std(clean.row(j).transpose());
        const double model = std::max(nm.sigma_floor, nm.rho * s_hat);
        const double kappa = ch.class_of(j) == ChannelClass::Voltage ? nm.kappa_volt : nm.kappa_freq;
        s[j] = kappa * std::sqrt(meas_std[j] * meas_std[j] + model * model);
    }
    return s;
}

enum class WindowTag { Baseline = 0, Inertia = 1, Damping = 2, Settling = 3 };

/// Window tag at time t. Inertia: [onset, onset + 0.35); damping:
/// [removal, removal + 1.2); settling: remainder until the next onset or T.
/// Precedence inertia > damping > settling.
inline WindowTag window_at(const PulseSchedule& s, double t, const WindowSpec& w, double horizon) {
    constexpr double eps = 1e-9;
    WindowTag best = WindowTag::Baseline;
    auto rank = [](WindowTag tag) {
        switch (tag) {
            case WindowTag::Inertia: return 3;
            case WindowTag::Damping: return 2;
            case WindowTag::Settling: return 1;
            default: return 0;
        }
    };
    for (std::size_t k = 0; k < s.pulses.size(); ++k) {
        const Pulse& p = s.pulses[k];
        const double onset = p.start, removal = p.start + p.duration;
        const double next = k + 1 < s.pulses.size() ? s.pulses[k + 1].start : horizon + eps;
        WindowTag tag = WindowTag::Baseline;
        if (t >= onset - eps && t < onset + w.inertia - eps) tag = WindowTag::Inertia;
        else if (t >= removal - eps && t < removal + w.damping - eps) tag = WindowTag::Damping;
        else if (t >= onset - eps && t < next - eps) tag = WindowTag::Settling;
        if (rank(tag) > rank(best)) best = tag;
    }
    return best;
}

inline Matrix raw_segment_weights(const PulseSchedule& s, const std::vector<double>& grid, const ChannelLayout& ch,
                                  const WindowSpec& w, double horizon) {
    Matrix W = Matrix::Ones(ch.size(), static_cast<Index>(grid.size()));
    for (Index k = 0; k < W.cols(); ++k) {
        const WindowTag tag = window_at(s, grid[static_cast<std::size_t>(k)], w, horizon);
        for (Index j = 0; j < ch.size(); ++j) {
            const bool freq = ch.class_of(j) == ChannelClass::Frequency;
            if (freq && tag == WindowTag::Inertia) W(j, k) = w.w_freq_M;
            else if (freq && tag == WindowTag::Damping) W(j, k) = w.w_freq_D;
            else if (!freq && tag == WindowTag::Settling) W(j, k) = w.w_volt_Y;
        }
    }
    return W;
}

/// Weights p x N_t normalized to mean one.
inline Matrix segment_weights(const PulseSchedule& s, const std::vector<double>& grid, const ChannelLayout& ch,
                              const WindowSpec& w, double horizon) {
    Matrix W = raw_segment_weights(s, grid, ch, w, horizon);
    return W / W.mean();
}

struct MeasurementSet {
    PulseSchedule schedule;
    std::vector<double> times;  // fit grid
    Matrix y;                   // p x N_t, noisy
    Matrix clean;               // p x N_t, withheld from the estimator
    Vector meas_std;            // per channel
    Vector sigma_eff;           // per channel
    Matrix weights;             // p x N_t

    Index n_times() const { return static_cast<Index>(times.size()); }
};

struct SynthesisConfig {
    GridSpec grid;
    NoiseModel noise;
    WindowSpec windows;
    ChannelLayout channels = default_channels_ieee9();
    /// Optional parameters at which the inflation scale s_hat is computed.
    std::optional<ParamVector> s_hat_theta;
    std::uint64_t seed = 0;
};

/// Channels at the fit-grid times of an integrated trajectory.
inline Matrix sample_channels(const Trajectory& tr, const std::vector<double>& times) {
    Matrix out(tr.channels.rows(), static_cast<Index>(times.size()));
    for (Index k = 0; k < out.cols(); ++k) {
        const Index n = tr.find(times[static_cast<std::size_t>(k)]);
        if (n < 0) throw InvalidInput("fit-grid time is not an integration node");
        out.col(k) = tr.channels.col(n);
    }
    return out;
}

inline Matrix simulate_channels(const NetworkCase& c, const ParamVector& theta, const PulseSchedule& s,
                                const SynthesisConfig& cfg) {
    const DaeModel model(c, theta);
    const OperatingPoint op = solve_equilibrium(model, base_loads(c));
    SolverConfig sc;
    sc.dt = cfg.grid.dt;
    const Trajectory tr = integrate(model, op, LoadProfile(base_loads(c), s), cfg.grid.horizon, sc, cfg.channels);
    return sample_channels(tr, cfg.grid.times());
}

/// Simulates every schedule at theta_true and adds white Gaussian noise with
/// per-channel std = clean std * 10^(-SNR/20).
inline std::vector<MeasurementSet> synthesize(const NetworkCase& c, const TruthSpec& truth,
                                              const std::vector<PulseSchedule>& schedules,
                                              const SynthesisConfig& cfg) {
    std::vector<MeasurementSet> out;
    const double gain = std::isinf(cfg.noise.snr_db) ? 0.0 : std::pow(10.0, -cfg.noise.snr_db / 20.0);
    for (std::size_t e = 0; e < schedules.size(); ++e) {
        validate_schedule(schedules[e], c, cfg.grid.horizon);
        MeasurementSet m;
        m.schedule = schedules[e];
        m.times = cfg.grid.times();
        m.clean = simulate_channels(c, truth.theta_true, schedules[e], cfg);
        const Index p = m.clean.rows(), nt = m.clean.cols();
        m.meas_std.resize(p);
        for (Index j = 0; j < p; ++j) m.meas_std[j] = gain * sample_std(m.clean.row(j).transpose());
        m.y = m.clean;
        if (gain > 0.0) {
            Philox4x32 rng(cfg.seed, streams::kNoise + e);
            std::normal_distribution<double> normal;
            for (Index k = 0; k < nt; ++k)
                for (Index j = 0; j < p; ++j) m.y(j, k) += m.meas_std[j] * normal(rng);
        }
        const Matrix s_hat_src =
            cfg.s_hat_theta ? simulate_channels(c, *cfg.s_hat_theta, schedules[e], cfg) : m.clean;
        m.sigma_eff = effective_sigma(s_hat_src, m.meas_std, cfg.channels, cfg.noise);
        m.weights = segment_weights(schedules[e], m.times, cfg.channels, cfg.windows, cfg.grid.horizon);
        out.push_back(std::move(m));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json schedule_to_json(const PulseSchedule& s) {
    nlohmann::json j;
    j["scale_reactive"] = s.scale_reactive;
    j["pulses"] = nlohmann::json::array();
    for (const auto& p : s.pulses)
        j["pulses"].push_back({{"bus", p.bus + 1}, {"start", p.start}, {"duration", p.duration}, {"amplitude", p.amplitude}});
    return j;
}

inline PulseSchedule schedule_from_json(const nlohmann::json& j) {
    PulseSchedule s;
    for (const auto& [key, _] : j.items())
        if (key != "pulses" && key != "scale_reactive") throw InvalidInput("unknown schedule key: " + key);
    s.scale_reactive = j.value("scale_reactive", true);
    for (const auto& p : j.at("pulses")) {
        for (const auto& [key, _] : p.items())
            if (key != "bus" && key != "start" && key != "duration" && key != "amplitude")
                throw InvalidInput("unknown pulse key: " + key);
        s.pulses.push_back({p.at("bus").get<Index>() - 1, p.at("start").get<double>(), p.at("duration").get<double>(),
                            p.at("amplitude").get<double>()});
    }
    return s;
}

inline nlohmann::json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vector vector_from_json(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

inline nlohmann::json matrix_to_json(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Index i = 0; i < m.rows(); ++i) rows.push_back(vector_to_json(m.row(i).transpose()));
    return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
    const Index r = static_cast<Index>(j.size());
    const Index c = r ? static_cast<Index>(j.at(0).size()) : 0;
    Matrix m(r, c);
    for (Index i = 0; i < r; ++i) {
        if (static_cast<Index>(j.at(static_cast<std::size_t>(i)).size()) != c) throw InvalidInput("ragged matrix");
        m.row(i) = vector_from_json(j.at(static_cast<std::size_t>(i))).transpose();
    }
    return m;
}

/// Full in-memory content, sufficient to restore the set exactly.
inline nlohmann::json measurement_to_json(const MeasurementSet& m) {
    return {{"schedule", schedule_to_json(m.schedule)},
            {"times", m.times},
            {"y", matrix_to_json(m.y)},
            {"clean", matrix_to_json(m.clean)},
            {"meas_std", vector_to_json(m.meas_std)},
            {"sigma_eff", vector_to_json(m.sigma_eff)},
            {"weights", matrix_to_json(m.weights)}};
}

inline MeasurementSet measurement_from_json(const nlohmann::json& j) {
    MeasurementSet m;
    m.schedule = schedule_from_json(j.at("schedule"));
    m.times = j.at("times").get<std::vector<double>>();
    m.y = matrix_from_json(j.at("y"));
    m.clean = matrix_from_json(j.at("clean"));
    m.meas_std = vector_from_json(j.at("meas_std"));
    m.sigma_eff = vector_from_json(j.at("sigma_eff"));
    m.weights = matrix_from_json(j.at("weights"));
    const Index nt = m.n_times(), p = m.sigma_eff.size();
    if (m.y.rows() != p || m.y.cols() != nt || m.clean.rows() != p || m.clean.cols() != nt || m.weights.rows() != p ||
        m.weights.cols() != nt || m.meas_std.size() != p)
        throw InvalidInput("measurement set dimensions are inconsistent");
    if ((m.sigma_eff.array() <= 0.0).any()) throw InvalidInput("sigma_eff must be positive");
    return m;
}

}  // namespace daebayes
