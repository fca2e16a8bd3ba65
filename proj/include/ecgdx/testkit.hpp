#pragma once

// Synthetic ECG and cohort generators with planted, known ground truth. A
// beat is a sum of three Gaussian bumps (P, QRS, T) repeated at the heart
// rate; disease labels shift morphology, a latent severity drives both a
// mild continuous morphology modulation and exponential event times, so
// classifiers and survival analyses have recoverable signal. Pure functions
// of (spec, seed).

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecgdx/comorbidity.hpp"
#include "ecgdx/signal.hpp"
#include "ecgdx/survival.hpp"
#include "ecgdx/train.hpp"
#include "ecgdx/util.hpp"

namespace ecgdx::testkit {

// ---------------- morphology ----------------

struct WaveParams {
    double amplitude_mv = 0.0;
    double width_s = 0.01;
    double offset_s = 0.0;  // relative to the beat center
};

struct MorphParams {
    double heart_rate_bpm = 70.0;
    WaveParams p_wave{0.15, 0.025, -0.18};
    WaveParams qrs{1.0, 0.012, 0.0};
    WaveParams t_wave{0.30, 0.055, 0.22};
    double white_noise_mv = 0.03;
    double mains_mv = 0.0;
    double mains_hz = 50.0;
    double wander_mv = 0.0;
    double wander_hz = 0.2;

    void validate() const {
        if (heart_rate_bpm < 30.0 || heart_rate_bpm > 220.0)
            throw std::invalid_argument("heart rate out of [30, 220] bpm");
        for (const auto& w : {p_wave, qrs, t_wave})
            if (!(w.width_s > 0.0)) throw std::invalid_argument("wave width must be positive");
        if (white_noise_mv < 0.0 || mains_mv < 0.0 || wander_mv < 0.0)
            throw std::invalid_argument("noise amplitudes must be non-negative");
    }
};

// Fixed per-lead projection of the beat template; rough limb/chest ratios.
inline const std::vector<double>& lead_projection() {
    static const std::vector<double> proj = {0.6, 1.0, 0.45, -0.75, 0.25, 0.65,
                                             0.35, 0.75, 1.05, 1.0, 0.9, 0.7};
    return proj;
}

inline double beat_template(const MorphParams& m, double t) {
    const double period = 60.0 / m.heart_rate_bpm;
    const double phase = t - std::floor(t / period + 0.5) * period;  // nearest beat center
    double v = 0.0;
    for (const auto& w : {m.p_wave, m.qrs, m.t_wave}) {
        const double d = phase - w.offset_s;
        v += w.amplitude_mv * std::exp(-d * d / (2.0 * w.width_s * w.width_s));
        // neighboring beat tails
        const double dl = phase + period - w.offset_s;
        const double dr = phase - period - w.offset_s;
        v += w.amplitude_mv * std::exp(-dl * dl / (2.0 * w.width_s * w.width_s));
        v += w.amplitude_mv * std::exp(-dr * dr / (2.0 * w.width_s * w.width_s));
    }
    return v;
}

// Deterministic 12-lead (or leading subset) record.
inline dsp::EcgRecord gen_ecg(const MorphParams& params, double duration_s, double fs,
                              std::uint64_t seed, int n_leads = 12) {
    params.validate();
    if (!(duration_s > 0.0) || !(fs > 0.0))
        throw std::invalid_argument("duration and fs must be positive");
    if (n_leads < 1 || n_leads > 12) throw std::invalid_argument("n_leads must be 1-12");

    const auto n = static_cast<std::size_t>(std::llround(duration_s * fs));
    Rng rng(derive_seed(seed, 0x656367ULL));
    const double wander_phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const double mains_phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);

    dsp::EcgRecord rec;
    rec.fs = fs;
    rec.patient_id = "synthetic";
    const auto& names = dsp::standard_lead_names();
    const auto& proj = lead_projection();
    rec.leads.resize(static_cast<std::size_t>(n_leads));
    for (int l = 0; l < n_leads; ++l) {
        rec.lead_names.push_back(names[static_cast<std::size_t>(l)]);
        auto& lead = rec.leads[static_cast<std::size_t>(l)];
        lead.fs = fs;
        lead.samples.resize(n);
    }
    const double two_pi = 2.0 * 3.14159265358979323846;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / fs;
        const double base = beat_template(params, t);
        const double mains = params.mains_mv * std::sin(two_pi * params.mains_hz * t + mains_phase);
        const double wander =
            params.wander_mv * std::sin(two_pi * params.wander_hz * t + wander_phase);
        for (int l = 0; l < n_leads; ++l) {
            const double noise = params.white_noise_mv > 0.0
                                     ? rng.normal(0.0, params.white_noise_mv)
                                     : 0.0;
            rec.leads[static_cast<std::size_t>(l)].samples[i] =
                proj[static_cast<std::size_t>(l)] * base + mains + wander + noise;
        }
    }
    return rec;
}

// ---------------- planted cohorts ----------------

// Morphology shifts applied when a label is positive. Scales are ratios so
// the signal survives per-segment normalization.
struct EffectSpec {
    double qrs_amp_scale = 1.0;
    double qrs_width_scale = 1.0;
    double t_amp_scale = 1.0;
    double p_amp_scale = 1.0;
    double rate_shift_bpm = 0.0;
};

struct LabelSpec {
    std::string code;  // canonical ICD-style code, e.g. "I50"
    std::string name;
    double prevalence = 0.1;
    EffectSpec effect;
};

struct SurvivalSpec {
    bool enabled = false;
    double baseline_hazard = 0.05;          // events per year at zero severity
    double log_hr_per_sd = 0.6931471805599453;  // ln 2: hazard doubles per sd
    double horizon_years = 10.0;
};

struct PlantedCohortSpec {
    std::size_t n_subjects = 100;
    std::vector<LabelSpec> labels;
    double duration_s = 10.0;
    double fs = 500.0;
    int n_leads = 12;
    MorphParams base;
    // Continuous severity modulation so risk is graded, not only binary.
    double severity_rate_bpm_per_sd = 6.0;
    double severity_qrs_amp_per_sd = 0.05;
    SurvivalSpec survival;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_subjects < 1) throw std::invalid_argument("cohort needs subjects");
        if (labels.empty()) throw std::invalid_argument("cohort needs labels");
        for (const auto& l : labels) {
            if (!(l.prevalence > 0.0 && l.prevalence < 1.0))
                throw std::invalid_argument("prevalence must be in (0,1)");
            if (l.code.empty()) throw std::invalid_argument("label code required");
        }
        if (survival.enabled && !(survival.baseline_hazard > 0.0))
            throw std::invalid_argument("baseline hazard must be positive");
        base.validate();
    }
};

struct GeneratedSubject {
    std::string patient_id;
    std::vector<std::uint8_t> labels;
    double severity = 0.0;  // latent z, also the hazard driver
    dsp::EcgRecord record;
    std::vector<surv::SurvivalRecord> outcomes;  // aligned with label order
};

struct GeneratedCohort {
    std::vector<std::string> label_codes;
    std::vector<std::string> label_names;
    std::vector<GeneratedSubject> subjects;
};

inline MorphParams apply_effects(const PlantedCohortSpec& spec,
                                 const std::vector<std::uint8_t>& labels, double severity) {
    MorphParams m = spec.base;
    for (std::size_t k = 0; k < labels.size(); ++k) {
        if (!labels[k]) continue;
        const auto& e = spec.labels[k].effect;
        m.qrs.amplitude_mv *= e.qrs_amp_scale;
        m.qrs.width_s *= e.qrs_width_scale;
        m.t_wave.amplitude_mv *= e.t_amp_scale;
        m.p_wave.amplitude_mv *= e.p_amp_scale;
        m.heart_rate_bpm += e.rate_shift_bpm;
    }
    m.heart_rate_bpm += spec.severity_rate_bpm_per_sd * severity;
    m.qrs.amplitude_mv *= 1.0 + spec.severity_qrs_amp_per_sd * severity;
    m.heart_rate_bpm = std::min(std::max(m.heart_rate_bpm, 35.0), 210.0);
    return m;
}

inline GeneratedCohort gen_cohort(const PlantedCohortSpec& spec) {
    spec.validate();
    GeneratedCohort cohort;
    for (const auto& l : spec.labels) {
        cohort.label_codes.push_back(l.code);
        cohort.label_names.push_back(l.name);
    }
    for (std::size_t i = 0; i < spec.n_subjects; ++i) {
        Rng rng(derive_seed(spec.seed, 0x737562ULL + i));
        GeneratedSubject subject;
        subject.patient_id = "p" + std::to_string(i);
        subject.labels.resize(spec.labels.size());
        for (std::size_t k = 0; k < spec.labels.size(); ++k)
            subject.labels[k] = rng.bernoulli(spec.labels[k].prevalence) ? 1 : 0;
        subject.severity = rng.normal();

        const MorphParams morph = apply_effects(spec, subject.labels, subject.severity);
        subject.record = gen_ecg(morph, spec.duration_s, spec.fs,
                                 derive_seed(spec.seed, 0x726563ULL + i), spec.n_leads);
        subject.record.patient_id = subject.patient_id;
        subject.record.acquired_at = static_cast<std::int64_t>(1700000000 + 3600 * i);

        if (spec.survival.enabled) {
            const double mult = std::exp(spec.survival.log_hr_per_sd * subject.severity);
            for (std::size_t k = 0; k < spec.labels.size(); ++k) {
                const double rate = spec.survival.baseline_hazard * mult;
                double t = rng.exponential(rate);
                bool event = true;
                if (t > spec.survival.horizon_years) {
                    t = spec.survival.horizon_years;
                    event = false;
                }
                subject.outcomes.push_back({subject.patient_id, t, event});
            }
        }
        cohort.subjects.push_back(std::move(subject));
    }
    return cohort;
}

// ---------------- dataset bridge ----------------

// Per-lead z-scored copies of each record, float storage, labels attached.
// `skip` / `take` carve deterministic train/test splits out of one cohort.
inline nn::Dataset make_dataset(const GeneratedCohort& cohort, std::size_t skip = 0,
                                std::size_t take = 0) {
    if (cohort.subjects.empty()) throw std::invalid_argument("empty cohort");
    const auto& first = cohort.subjects.front().record;
    nn::Dataset d;
    d.channels = first.leads.size();
    d.length = first.leads.front().samples.size();
    d.n_labels = cohort.label_codes.size();
    const std::size_t end = take == 0 ? cohort.subjects.size()
                                      : std::min(cohort.subjects.size(), skip + take);
    for (std::size_t i = skip; i < end; ++i) {
        const auto& subject = cohort.subjects[i];
        for (const auto& lead : subject.record.leads) {
            double mean = 0.0;
            for (double v : lead.samples) mean += v;
            mean /= static_cast<double>(lead.samples.size());
            double var = 0.0;
            for (double v : lead.samples) var += (v - mean) * (v - mean);
            const double sd = std::sqrt(var / static_cast<double>(lead.samples.size()));
            const double scale = sd < 1e-8 ? 0.0 : 1.0 / sd;
            for (double v : lead.samples)
                d.x.push_back(static_cast<float>((v - mean) * scale));
        }
        for (auto y : subject.labels) d.y.push_back(y);
    }
    return d;
}

// ---------------- synthetic risk matrices ----------------

// Columns i and j of each couple share a latent factor with the given
// loading; all other columns are independent noise.
struct RiskMatrixSpec {
    std::size_t n_subjects = 1000;
    std::vector<std::string> codes;
    std::vector<std::pair<std::size_t, std::size_t>> coupled_pairs;
    double coupling = 0.8;  // latent loading for coupled pairs
    std::uint64_t seed = 0;
};

inline comorb::RiskMatrix gen_risk_matrix(const RiskMatrixSpec& spec) {
    if (spec.codes.empty() || spec.n_subjects < 3)
        throw std::invalid_argument("risk matrix spec too small");
    comorb::RiskMatrix m;
    m.diseases = spec.codes;
    Rng rng(derive_seed(spec.seed, 0x726d78ULL));
    const std::size_t k = spec.codes.size();
    m.values.assign(spec.n_subjects * k, 0.0);
    for (std::size_t s = 0; s < spec.n_subjects; ++s) {
        m.subject_ids.push_back("s" + std::to_string(s));
        for (std::size_t d = 0; d < k; ++d) m.values[s * k + d] = rng.normal();
        for (const auto& [a, b] : spec.coupled_pairs) {
            const double latent = rng.normal();
            const double resid = std::sqrt(1.0 - spec.coupling * spec.coupling);
            m.values[s * k + a] = spec.coupling * latent + resid * m.values[s * k + a];
            m.values[s * k + b] = spec.coupling * latent + resid * m.values[s * k + b];
        }
    }
    return m;
}

}  // namespace ecgdx::testkit
