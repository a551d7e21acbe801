#pragma once

namespace pearl {

// Fanger's PMV (ISO 7730 Annex D): air temperature / mean radiant temperature
// in °C, relative air speed in m/s, relative humidity in %, metabolic rate in
// met, clothing insulation in clo. Returns the unclamped index; throws if the
// clothing-surface-temperature iteration fails to converge within 150 rounds.
double pmv(double air_temp_c, double radiant_temp_c, double air_speed_ms, double rel_humidity_pct,
           double met, double clo);

}  // namespace pearl
