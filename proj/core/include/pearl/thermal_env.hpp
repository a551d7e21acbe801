#pragma once

#include <array>
#include <string>
#include <string_view>

#include "pearl/env.hpp"
#include "pearl/rng.hpp"

namespace pearl {

enum class Activity : int {
  sleeping = 0,
  relaxing = 1,
  watching_tv = 2,
  cooking = 3,
  exercising = 4,
  absent = 5,
};
constexpr int kActivityCount = 6;

// Metabolic rate (met), clothing insulation (clo), room air speed (m/s) and
// the occupant's sensible heat gain to the room (W) per activity.
struct ActivityParams {
  double met = 1.0;
  double clo = 1.0;
  double air_speed = 0.1;
  double heat_watts = 105.0;
};

const ActivityParams& activity_params(Activity act);
const char* activity_name(Activity act);

// Comfort context shared by reward computation and tests. Mean radiant
// temperature is taken equal to air temperature; relative air speed gets the
// standard metabolic correction v_r = v + 0.3*(met - 1) above 1 met.
struct ComfortModel {
  double relative_humidity = 45.0;

  // Clamped to [-3, 3]; throws for Activity::absent (nobody to be comfortable).
  double pmv_for(Activity act, double temp_c) const;
};

// Daily sinusoid, coldest before dawn, warmest mid-afternoon. The default
// shoulder-season profile swings across the comfort range, so the house needs
// the heater at night and the cooler in the afternoon.
struct OutdoorProfile {
  double mean_c = 20.0;
  double amplitude_c = 9.0;
  double peak_hour = 15.0;

  double at(long hour) const;
};

struct HouseParams {
  double thermal_resistance = 2.0e-3;  // K/W envelope loss
  double thermal_mass = 7.2e6;         // J/K  (R*C = 4 h time constant)
  double heater_supply_c = 50.0;
  double cooler_supply_c = 10.0;
  double airflow_w_per_k = 800.0;  // HVAC supply-air heat transfer coefficient
  OutdoorProfile outdoor;
};

// Weekly activity schedule (hour-of-week grid, Monday 00:00 first) plus the
// per-hour probability rho of substituting a uniformly random activity.
struct OccupantProfile {
  std::string name;
  std::array<Activity, 168> week{};
  double rho = 0.05;
};

OccupantProfile make_profile_h1();
OccupantProfile make_profile_h2();
OccupantProfile make_profile_h3();
OccupantProfile occupant_profile(std::string_view id);  // "H1" | "H2" | "H3"

// One simulated house + occupant. Steps are hours; the action is the
// thermostat setpoint 60..80 °F (21 discrete values). Inside each hour the
// first-order thermal ODE runs in 60 s sub-steps with hysteresis of ±2 °C
// around the setpoint; the reward comes from the end-of-hour PMV: +1 inside
// [-0.5, 0.5], else -|PMV|. Hours with nobody home score 0 and carry no
// utility sample. The task is continuing: step() never reports done.
class ThermalEnv : public Environment {
 public:
  ThermalEnv(OccupantProfile profile, HouseParams house, std::uint64_t seed,
             ComfortModel comfort = {});

  int obs_dim() const override { return 2; }  // (activity scalar, normalized temp)
  int action_count() const override { return 21; }
  std::vector<double> reset() override;
  StepResult step(int action) override;
  int state_id() const override;
  int state_id_count() const override { return kActivityCount * 21; }
  int truth_label() const override { return static_cast<int>(activity_); }
  int truth_label_count() const override { return kActivityCount; }
  long clock() const override { return hour_; }
  int phase_in_cycle() const override { return static_cast<int>(hour_ % 24); }
  int cycle_length() const override { return 24; }
  UtilityKind utility_kind() const override { return UtilityKind::in_range_fraction; }

  // Swap the occupant mid-run (behavior drift scenarios).
  void set_profile(OccupantProfile profile);

  double indoor_temp_c() const { return temp_c_; }
  double indoor_temp_f() const;
  Activity current_activity() const { return activity_; }
  double last_pmv() const { return last_pmv_; }

  static int state_id_for(Activity act, double temp_f);
  static double setpoint_f(int action) { return 60.0 + action; }

 private:
  std::vector<double> observe() const;
  Activity draw_activity(long hour);

  OccupantProfile profile_;
  HouseParams house_;
  ComfortModel comfort_;
  Rng rng_;
  long hour_ = 0;
  double temp_c_ = 20.0;
  Activity activity_ = Activity::sleeping;
  enum class HvacMode { off, heating, cooling } hvac_ = HvacMode::off;
  double last_pmv_ = 0.0;
};

}  // namespace pearl
