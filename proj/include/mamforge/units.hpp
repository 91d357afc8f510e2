#pragma once

// Project-wide units: Å, eV, amu, fs, elementary charge e.
namespace mamforge::units {

/// amu·Å²/fs² expressed in eV.
inline constexpr double kMassVelocity2ToEv = 103.642691;
/// eV/Å³ expressed in GPa.
inline constexpr double kEvPerA3ToGpa = 160.21766;
/// eV/Å² expressed in J/m².
inline constexpr double kEvPerA2ToJPerM2 = 16.021766;
/// Coulomb constant e²/(4πε₀) in eV·Å/e².
inline constexpr double kCoulomb = 14.399645;

inline constexpr double kPi = 3.14159265358979323846;

}  // namespace mamforge::units
