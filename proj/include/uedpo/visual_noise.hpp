#ifndef UEDPO_VISUAL_NOISE_HPP
#define UEDPO_VISUAL_NOISE_HPP

// Forward-diffusion corruption of image features.

#include <string_view>

#include "core.hpp"
#include "rng.hpp"
#include "toy_policy.hpp"

namespace uedpo {

/// How the cumulative signal fraction is formed from the per-step rates.
enum class ScheduleInterpretation {
    OneMinus, ///< alpha_bar[k] = prod_{i<=k} (1 - rate_i), the usual DDPM reading
    Literal,  ///< alpha_bar[k] = prod_{i<=k} rate_i
};

inline std::string_view to_string(ScheduleInterpretation s) noexcept {
    return s == ScheduleInterpretation::OneMinus ? "one_minus" : "literal";
}

inline ScheduleInterpretation schedule_interpretation_from_string(std::string_view s) {
    if (s == "one_minus") return ScheduleInterpretation::OneMinus;
    if (s == "literal") return ScheduleInterpretation::Literal;
    throw InvalidInput("unknown schedule interpretation '" + std::string(s) + "'");
}

struct NoiseSchedule {
    Vector per_step;
    Vector alpha_bar;
    ScheduleInterpretation interpretation = ScheduleInterpretation::OneMinus;

    std::size_t steps() const noexcept { return per_step.size(); }
};

struct BlurredImage {
    ImageFeatures image;
    std::size_t step = 0;
};

inline constexpr double kRateMin = 1e-5;
inline constexpr double kRateMax = 0.5e-2;

/// Per-step rates sigmoid(l_i) * (5e-3 - 1e-5) + 1e-5 with l_i equally spaced over [-6, 6].
/// The literal product underflows to 0 after a few hundred steps; alpha_bar is
/// stored as computed.
inline NoiseSchedule build_schedule(std::size_t num_steps,
                                    ScheduleInterpretation interp = ScheduleInterpretation::OneMinus) {
    require(num_steps >= 1, "build_schedule: num_steps must be >= 1");
    NoiseSchedule s;
    s.interpretation = interp;
    s.per_step.resize(num_steps);
    s.alpha_bar.resize(num_steps);
    double prod = 1.0;
    for (std::size_t i = 0; i < num_steps; ++i) {
        const double l = num_steps == 1 ? -6.0 : -6.0 + 12.0 * static_cast<double>(i) / static_cast<double>(num_steps - 1);
        s.per_step[i] = sigmoid(l) * (kRateMax - kRateMin) + kRateMin;
        prod *= interp == ScheduleInterpretation::OneMinus ? (1.0 - s.per_step[i]) : s.per_step[i];
        s.alpha_bar[i] = prod;
    }
    return s;
}

inline double alpha_bar_at(const NoiseSchedule& schedule, std::size_t k) {
    require(k < schedule.steps(), "alpha_bar_at: step " + std::to_string(k) + " out of range");
    return schedule.alpha_bar[k];
}

/// sqrt(a)*image + sqrt(1-a)*noise for a = alpha_bar[k].
inline BlurredImage corrupt_with_alpha(const ImageFeatures& image, double alpha_bar, std::size_t k,
                                       std::span<const double> noise) {
    require(noise.size() == image.values.size(), "corrupt: noise dimension does not match image");
    const double a = std::sqrt(alpha_bar);
    const double b = std::sqrt(1.0 - alpha_bar);
    BlurredImage out{{Vector(image.values.size())}, k};
    for (std::size_t i = 0; i < image.values.size(); ++i) out.image.values[i] = a * image.values[i] + b * noise[i];
    return out;
}

inline BlurredImage corrupt(const ImageFeatures& image, const NoiseSchedule& schedule, std::size_t k,
                            std::span<const double> noise) {
    return corrupt_with_alpha(image, alpha_bar_at(schedule, k), k, noise);
}

/// Standard-normal noise keyed by (run seed, pair id, training step).
inline Vector pair_noise(std::uint64_t seed, std::uint64_t pair_id, std::uint64_t step, std::size_t dim) {
    Stream stream(seed ^ 0x6E6F697365ULL, pair_id, step);
    Vector eps(dim);
    for (double& e : eps) e = stream.normal();
    return eps;
}

} // namespace uedpo

#endif // UEDPO_VISUAL_NOISE_HPP
