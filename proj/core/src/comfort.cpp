#include "pearl/comfort.hpp"

#include <cmath>
#include <stdexcept>

namespace pearl {

double pmv(double air_temp_c, double radiant_temp_c, double air_speed_ms, double rel_humidity_pct,
           double met, double clo) {
  const double ta = air_temp_c;
  const double tr = radiant_temp_c;
  const double vel = air_speed_ms;

  // Water vapour pressure, Pa.
  const double pa = rel_humidity_pct * 10.0 * std::exp(16.6536 - 4030.183 / (ta + 235.0));
  const double icl = 0.155 * clo;  // clothing insulation, m^2*K/W
  const double m = met * 58.15;    // metabolic rate, W/m^2
  const double mw = m;             // no external work

  const double fcl = icl <= 0.078 ? 1.0 + 1.29 * icl : 1.05 + 0.645 * icl;
  const double hcf = 12.1 * std::sqrt(vel);  // forced convection coefficient
  const double taa = ta + 273.0;
  const double tra = tr + 273.0;

  // Clothing surface temperature by iteration.
  const double tcla = taa + (35.5 - ta) / (3.5 * icl + 0.1);
  const double p1 = icl * fcl;
  const double p2 = p1 * 3.96;
  const double p3 = p1 * 100.0;
  const double p4 = p1 * taa;
  const double p5 = 308.7 - 0.028 * mw + p2 * std::pow(tra / 100.0, 4.0);
  double xn = tcla / 100.0;
  double xf = tcla / 50.0;
  double hc = hcf;
  constexpr double kEps = 0.00015;
  int iterations = 0;
  while (std::abs(xn - xf) > kEps) {
    xf = (xf + xn) / 2.0;
    const double hcn = 2.38 * std::pow(std::abs(100.0 * xf - taa), 0.25);
    hc = std::max(hcf, hcn);
    xn = (p5 + p4 * hc - p2 * std::pow(xf, 4.0)) / (100.0 + p3 * hc);
    if (++iterations > 150)
      throw std::runtime_error("pmv: clothing surface temperature iteration did not converge");
  }
  const double tcl = 100.0 * xn - 273.0;

  // Heat-loss components, W/m^2.
  const double hl1 = 3.05 * 0.001 * (5733.0 - 6.99 * mw - pa);      // skin diffusion
  const double hl2 = mw > 58.15 ? 0.42 * (mw - 58.15) : 0.0;        // sweat evaporation
  const double hl3 = 1.7 * 0.00001 * m * (5867.0 - pa);             // latent respiration
  const double hl4 = 0.0014 * m * (34.0 - ta);                      // dry respiration
  const double hl5 = 3.96 * fcl * (std::pow(xn, 4.0) - std::pow(tra / 100.0, 4.0));  // radiation
  const double hl6 = fcl * hc * (tcl - ta);                         // convection

  const double ts = 0.303 * std::exp(-0.036 * m) + 0.028;  // thermal sensation coefficient
  return ts * (mw - hl1 - hl2 - hl3 - hl4 - hl5 - hl6);
}

}  // namespace pearl
