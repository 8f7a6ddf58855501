#pragma once

#include <numbers>

namespace spinresolft {

/// CODATA 2018 values. Kept in one record so a scenario can override them.
struct PhysicalConstants {
    double gamma_e = 1.76085963023e11;   // electron gyromagnetic ratio, rad/(s*T)
    double gamma_p = 2.6752218744e8;     // proton gyromagnetic ratio, rad/(s*T)
    double mu0 = 1.25663706212e-6;       // vacuum permeability, T*m/A
    double hbar = 1.054571817e-34;       // J*s
};

inline constexpr PhysicalConstants kCodata{};

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Unit helpers. Internally everything is SI.
inline constexpr double kNano = 1e-9;
inline constexpr double kMicro = 1e-6;
inline constexpr double kMilli = 1e-3;
inline constexpr double kGauss = 1e-4;

}  // namespace spinresolft
