#pragma once

#include <numbers>

namespace ionmag {

// CODATA 2018 values. Everything inside the library is SI; the unit factors
// below convert at the config/CSV boundary.
struct PhysicalConstants {
    static constexpr double g_j = 2.0;
    static constexpr double bohr_magneton = 9.2740100783e-24;  // J/T
    static constexpr double hbar = 1.054571817e-34;            // J s
    static constexpr double planck = 6.62607015e-34;           // J s
    static constexpr double elementary_charge = 1.602176634e-19;
    static constexpr double atomic_mass_unit = 1.66053906660e-27;
    static constexpr double mass_ca40 = 39.962590863 * atomic_mass_unit;

    // g_J mu_B / hbar, the phase rate per tesla (rad s^-1 T^-1).
    static constexpr double gyromagnetic = g_j * bohr_magneton / hbar;
};

namespace units {
inline constexpr double um = 1e-6;
inline constexpr double us = 1e-6;
inline constexpr double ms = 1e-3;
inline constexpr double mT = 1e-3;
inline constexpr double uT = 1e-6;
inline constexpr double nT = 1e-9;
inline constexpr double MHz = 1e6;
// micrometer * millisecond, the unit the displacement-time integral is reported in
inline constexpr double um_ms = um * ms;
}  // namespace units

inline constexpr double pi = std::numbers::pi;

}  // namespace ionmag
