#include "pearl/thermal_env.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pearl/comfort.hpp"

namespace pearl {

namespace {

constexpr double kFPerC = 1.8;

double f_to_c(double f) { return (f - 32.0) / kFPerC; }
double c_to_f(double c) { return c * kFPerC + 32.0; }

// Clothing and air-speed values are chosen so each activity has a distinct
// neutral (PMV = 0) indoor temperature: duvet-wrapped sleeping is comfortable
// near 68 °F, light loungewear pushes relaxing up to ~80 °F, a sweater and
// throw put television near 71 °F, kitchen heat and light clothes put cooking
// near 67 °F, and a 4-met workout is neutral around 61 °F.
const std::array<ActivityParams, kActivityCount> kActivityTable = {{
    {0.8, 2.50, 0.05, 84.0},   // sleeping (bedding insulation)
    {1.0, 0.42, 0.10, 105.0},  // relaxing
    {1.0, 1.29, 0.05, 105.0},  // watching TV
    {1.8, 0.90, 0.10, 189.0},  // cooking
    {4.0, 0.30, 0.10, 420.0},  // exercising
    {0.0, 0.00, 0.00, 0.0},    // not at home
}};

const std::array<const char*, kActivityCount> kActivityNames = {
    "sleeping", "relaxing", "watching_tv", "cooking", "exercising", "absent"};

}  // namespace

const ActivityParams& activity_params(Activity act) {
  return kActivityTable[static_cast<std::size_t>(act)];
}

const char* activity_name(Activity act) {
  return kActivityNames[static_cast<std::size_t>(act)];
}

double ComfortModel::pmv_for(Activity act, double temp_c) const {
  if (act == Activity::absent) throw std::logic_error("pmv_for: house is empty");
  const ActivityParams& p = activity_params(act);
  const double v_rel = p.met > 1.0 ? p.air_speed + 0.3 * (p.met - 1.0) : p.air_speed;
  const double raw = pmv(temp_c, temp_c, v_rel, relative_humidity, p.met, p.clo);
  return std::clamp(raw, -3.0, 3.0);
}

double OutdoorProfile::at(long hour) const {
  const double day_angle = 2.0 * M_PI * (static_cast<double>(hour % 24) - peak_hour) / 24.0;
  return mean_c + amplitude_c * std::cos(day_angle);
}

namespace {

// Fills one day of a weekly grid: [from, to) hours get the activity.
void block(std::array<Activity, 168>& week, int day, int from, int to, Activity act) {
  for (int h = from; h < to; ++h) week[static_cast<std::size_t>(day * 24 + h)] = act;
}

}  // namespace

OccupantProfile make_profile_h1() {
  OccupantProfile p;
  p.name = "H1";
  p.rho = 0.05;
  // H1 keeps the same routine every day: long sleep, a late breakfast, out of
  // the house through mid-afternoon, television from the minute they return,
  // a short workout, then reading in a warm room before bed.
  for (int day = 0; day < 7; ++day) {
    block(p.week, day, 0, 8, Activity::sleeping);
    block(p.week, day, 8, 10, Activity::cooking);
    block(p.week, day, 10, 16, Activity::absent);
    block(p.week, day, 16, 21, Activity::watching_tv);
    block(p.week, day, 21, 22, Activity::exercising);
    block(p.week, day, 22, 24, Activity::relaxing);
  }
  return p;
}

OccupantProfile make_profile_h2() {
  OccupantProfile p;
  p.name = "H2";
  p.rho = 0.20;
  for (int day = 0; day < 7; ++day) {
    const bool weekend = day >= 5;
    if (!weekend) {
      block(p.week, day, 0, 7, Activity::sleeping);
      block(p.week, day, 7, 8, Activity::cooking);
      block(p.week, day, 8, 9, Activity::exercising);
      block(p.week, day, 9, 18, Activity::absent);
      block(p.week, day, 18, 19, Activity::cooking);
      block(p.week, day, 19, 22, Activity::watching_tv);
      block(p.week, day, 22, 24, Activity::relaxing);
    } else {
      block(p.week, day, 0, 9, Activity::sleeping);
      block(p.week, day, 9, 10, Activity::cooking);
      block(p.week, day, 10, 13, Activity::absent);
      block(p.week, day, 13, 15, Activity::relaxing);
      block(p.week, day, 15, 16, Activity::exercising);
      block(p.week, day, 16, 18, Activity::absent);
      block(p.week, day, 18, 19, Activity::cooking);
      block(p.week, day, 19, 23, Activity::watching_tv);
      block(p.week, day, 23, 24, Activity::relaxing);
    }
  }
  return p;
}

OccupantProfile make_profile_h3() {
  // The high-variability occupant keeps no stable routine at all: the day is
  // twelve two-hour slots cycling through every activity twice, and the slot
  // pattern rotates by five slots each day (5 is coprime to 12, so all seven
  // days differ). Every activity gets equal time, which makes the weekly
  // activity marginal uniform — the least predictable occupant the schedule
  // grid can express — before the per-hour substitution noise is added.
  OccupantProfile p;
  p.name = "H3";
  p.rho = 0.40;
  static constexpr std::array<Activity, 12> kSlots = {
      Activity::sleeping, Activity::cooking,  Activity::watching_tv, Activity::exercising,
      Activity::relaxing, Activity::absent,   Activity::sleeping,    Activity::watching_tv,
      Activity::cooking,  Activity::relaxing, Activity::exercising,  Activity::absent,
  };
  for (int day = 0; day < 7; ++day)
    for (int hour = 0; hour < 24; ++hour)
      p.week[static_cast<std::size_t>(day * 24 + hour)] =
          kSlots[static_cast<std::size_t>((hour / 2 + 5 * day) % 12)];
  return p;
}

OccupantProfile occupant_profile(std::string_view id) {
  if (id == "H1") return make_profile_h1();
  if (id == "H2") return make_profile_h2();
  if (id == "H3") return make_profile_h3();
  throw std::invalid_argument("unknown occupant profile: " + std::string(id));
}

ThermalEnv::ThermalEnv(OccupantProfile profile, HouseParams house, std::uint64_t seed,
                       ComfortModel comfort)
    : profile_(std::move(profile)),
      house_(house),
      comfort_(comfort),
      rng_(Rng(seed).substream("thermal-env")) {
  reset();
}

std::vector<double> ThermalEnv::reset() {
  hour_ = 0;
  temp_c_ = f_to_c(68.0);
  hvac_ = HvacMode::off;
  last_pmv_ = 0.0;
  activity_ = draw_activity(hour_);
  return observe();
}

Activity ThermalEnv::draw_activity(long hour) {
  const Activity scheduled = profile_.week[static_cast<std::size_t>(hour % 168)];
  if (rng_.chance(profile_.rho))
    return static_cast<Activity>(rng_.uniform_int(0, kActivityCount - 1));
  return scheduled;
}

void ThermalEnv::set_profile(OccupantProfile profile) { profile_ = std::move(profile); }

StepResult ThermalEnv::step(int action) {
  if (action < 0 || action >= action_count())
    throw std::invalid_argument("thermal step: setpoint action out of range");
  const double setpoint_c = f_to_c(setpoint_f(action));
  const double t_out = house_.outdoor.at(hour_);
  const double q_occ = activity_params(activity_).heat_watts;

  // 60 sub-steps of 60 s. Within a sub-step every coefficient is constant, so
  // the linear ODE dT/dt = (A - B*T)/C integrates exactly as an exponential
  // relaxation toward A/B.
  constexpr double kDt = 60.0;
  for (int sub = 0; sub < 60; ++sub) {
    // Hysteresis: start ±2 °C out, run until the setpoint is crossed back.
    switch (hvac_) {
      case HvacMode::off:
        if (temp_c_ < setpoint_c - 2.0) hvac_ = HvacMode::heating;
        else if (temp_c_ > setpoint_c + 2.0) hvac_ = HvacMode::cooling;
        break;
      case HvacMode::heating:
        if (temp_c_ >= setpoint_c) hvac_ = HvacMode::off;
        break;
      case HvacMode::cooling:
        if (temp_c_ <= setpoint_c) hvac_ = HvacMode::off;
        break;
    }
    double a = t_out / house_.thermal_resistance + q_occ;
    double b = 1.0 / house_.thermal_resistance;
    if (hvac_ == HvacMode::heating) {
      a += house_.airflow_w_per_k * house_.heater_supply_c;
      b += house_.airflow_w_per_k;
    } else if (hvac_ == HvacMode::cooling) {
      a += house_.airflow_w_per_k * house_.cooler_supply_c;
      b += house_.airflow_w_per_k;
    }
    const double t_eq = a / b;
    temp_c_ = t_eq + (temp_c_ - t_eq) * std::exp(-b * kDt / house_.thermal_mass);
  }

  StepResult result;
  if (activity_ == Activity::absent) {
    result.reward = 0.0;
    result.utility_sample_valid = false;
  } else {
    last_pmv_ = comfort_.pmv_for(activity_, temp_c_);
    result.reward = std::abs(last_pmv_) <= 0.5 ? 1.0 : -std::abs(last_pmv_);
    result.utility_sample = last_pmv_;
    result.utility_sample_valid = true;
  }

  ++hour_;
  activity_ = draw_activity(hour_);
  result.obs = observe();
  result.done = false;
  return result;
}

std::vector<double> ThermalEnv::observe() const {
  // The state is the pair (activity, indoor temperature), both as scalars:
  // activity as its 1..6 index scaled to (0,1], temperature mapped onto
  // [0,1] over the controllable 60..80 °F span. Keeping the activity ordinal
  // (rather than one-hot) means shallow layers cannot linearly separate the
  // six regimes — depth has to earn its keep, which is what makes the exit
  // branches differ in quality.
  const double act_norm = (static_cast<double>(activity_) + 1.0) / static_cast<double>(kActivityCount);
  const double temp_f = std::clamp(indoor_temp_f(), 60.0, 80.0);
  return {act_norm, (temp_f - 60.0) / 20.0};
}

double ThermalEnv::indoor_temp_f() const { return c_to_f(temp_c_); }

int ThermalEnv::state_id() const { return state_id_for(activity_, indoor_temp_f()); }

int ThermalEnv::state_id_for(Activity act, double temp_f) {
  const int bucket = static_cast<int>(std::lround(std::clamp(temp_f, 60.0, 80.0))) - 60;
  return static_cast<int>(act) * 21 + bucket;
}

}  // namespace pearl
