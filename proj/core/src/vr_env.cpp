#include "pearl/vr_env.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pearl/csv.hpp"

namespace pearl {

namespace {

const std::array<const char*, kVRActionCount> kActionNames = {
    "take_break", "enable_vr", "disable_vr", "change_content", "no_change"};

// P(bit' = 1) given the current bit value, per regime.
struct BitRule {
  double keep;  // current bit is 1
  double gain;  // current bit is 0
};

struct BitDynamics {
  BitRule al, fl, vl;
};

// Regimes: a break pauses content regardless of mode; otherwise dynamics
// follow the content mode, with change_content giving an attention bump.
BitDynamics bit_dynamics(int mode, VRAction a, double vertigo_onset_3d) {
  if (a == VRAction::take_break)
    return {{0.80, 0.70}, {0.95, 0.82}, {0.97, 0.85}};
  if (mode == 1) {  // immersive 3D
    BitDynamics d{{0.92, 0.70}, {0.72, 0.10}, {1.0 - vertigo_onset_3d, 0.10}};
    if (a == VRAction::change_content) d.al = {0.95, 0.85};
    return d;
  }
  BitDynamics d{{0.75, 0.35}, {0.90, 0.30}, {0.98, 0.55}};  // flat 2D
  if (a == VRAction::change_content) d.al = {0.85, 0.60};
  return d;
}

double bit_prob(const BitRule& rule, int current, int next) {
  const double p1 = current == 1 ? rule.keep : rule.gain;
  return next == 1 ? p1 : 1.0 - p1;
}

ProfileMDP build_profile(std::string name, double vertigo_onset_3d) {
  ProfileMDP p;
  p.name = std::move(name);
  p.vertigo_onset_3d = vertigo_onset_3d;
  for (int mode = 0; mode < 2; ++mode) {
    for (int a = 0; a < kVRActionCount; ++a) {
      const BitDynamics dyn = bit_dynamics(mode, static_cast<VRAction>(a), vertigo_onset_3d);
      for (int from = 0; from < 8; ++from) {
        const int al = (from >> 2) & 1, fl = (from >> 1) & 1, vl = from & 1;
        for (int to = 0; to < 8; ++to) {
          const int al2 = (to >> 2) & 1, fl2 = (to >> 1) & 1, vl2 = to & 1;
          p.matrix[static_cast<std::size_t>(mode)][static_cast<std::size_t>(a)]
                  [static_cast<std::size_t>(from)][static_cast<std::size_t>(to)] =
              bit_prob(dyn.al, al, al2) * bit_prob(dyn.fl, fl, fl2) * bit_prob(dyn.vl, vl, vl2);
        }
      }
    }
  }
  p.validate();
  return p;
}

}  // namespace

const char* vr_action_name(VRAction a) {
  return kActionNames[static_cast<std::size_t>(a)];
}

const std::array<std::array<double, 8>, 8>& ProfileMDP::transition_matrix(int mode,
                                                                          VRAction a) const {
  if (mode < 0 || mode > 1) throw std::out_of_range("transition_matrix: bad mode");
  return matrix[static_cast<std::size_t>(mode)][static_cast<std::size_t>(a)];
}

int ProfileMDP::sample_next(int from_index, int mode, VRAction a, Rng& rng) const {
  const auto& row = transition_matrix(mode, a)[static_cast<std::size_t>(from_index)];
  const double draw = rng.uniform();
  double acc = 0.0;
  for (int to = 0; to < 8; ++to) {
    acc += row[static_cast<std::size_t>(to)];
    if (draw < acc) return to;
  }
  return 7;  // guard against accumulated rounding at draw ~= 1
}

void ProfileMDP::validate() const {
  for (int mode = 0; mode < 2; ++mode)
    for (int a = 0; a < kVRActionCount; ++a)
      for (int from = 0; from < 8; ++from) {
        double total = 0.0;
        for (int to = 0; to < 8; ++to) {
          const double v = matrix[static_cast<std::size_t>(mode)][static_cast<std::size_t>(a)]
                                 [static_cast<std::size_t>(from)][static_cast<std::size_t>(to)];
          if (v < 0.0 || v > 1.0) throw std::runtime_error("profile: probability out of [0,1]");
          total += v;
        }
        if (std::abs(total - 1.0) > 1e-12)
          throw std::runtime_error("profile: transition row does not sum to 1");
      }
}

void ProfileMDP::dump_csv(const std::string& path) const {
  std::vector<std::string> header = {"mode", "action", "from"};
  for (int to = 0; to < 8; ++to) header.push_back("to" + std::to_string(to));
  CsvWriter csv(path, header);
  for (int mode = 0; mode < 2; ++mode)
    for (int a = 0; a < kVRActionCount; ++a)
      for (int from = 0; from < 8; ++from) {
        std::vector<std::string> row = {CsvWriter::num(static_cast<long long>(mode)),
                                        CsvWriter::num(static_cast<long long>(a)),
                                        CsvWriter::num(static_cast<long long>(from))};
        for (int to = 0; to < 8; ++to)
          row.push_back(CsvWriter::num(matrix[static_cast<std::size_t>(mode)][static_cast<std::size_t>(a)]
                                             [static_cast<std::size_t>(from)][static_cast<std::size_t>(to)]));
        csv.write_row(row);
      }
}

ProfileMDP ProfileMDP::load_csv(const std::string& path) {
  const CsvTable table = read_csv(path);
  if (table.rows.size() != 2 * kVRActionCount * 8)
    throw std::runtime_error("profile csv: expected 80 transition rows");
  ProfileMDP p;
  p.name = "loaded";
  for (const auto& row : table.rows) {
    const int mode = std::stoi(row.at(0));
    const int a = std::stoi(row.at(1));
    const int from = std::stoi(row.at(2));
    for (int to = 0; to < 8; ++to)
      p.matrix.at(static_cast<std::size_t>(mode)).at(static_cast<std::size_t>(a))
          .at(static_cast<std::size_t>(from)).at(static_cast<std::size_t>(to)) =
          std::stod(row.at(static_cast<std::size_t>(3 + to)));
  }
  p.validate();
  return p;
}

std::array<ProfileMDP, 3> make_vr_profiles(std::uint64_t /*seed*/) {
  return {build_profile("P1", 0.05), build_profile("P2", 0.18), build_profile("P3", 0.35)};
}

ProfileMDP vr_profile(std::string_view id) {
  if (id == "P1") return build_profile("P1", 0.05);
  if (id == "P2") return build_profile("P2", 0.18);
  if (id == "P3") return build_profile("P3", 0.35);
  throw std::invalid_argument("unknown VR profile: " + std::string(id));
}

double vr_expected_score(const VRState& s) {
  return 100.0 * (0.5 * s.al + 0.3 * s.fl + 0.2 * s.vl);
}

VREnv::VREnv(ProfileMDP profile, std::uint64_t seed, double noise_sd)
    : profile_(std::move(profile)), rng_(Rng(seed).substream("vr-env")), noise_sd_(noise_sd) {
  profile_.validate();
  reset();
}

std::vector<double> VREnv::reset() {
  // A fresh lecture: the student arrives mostly rested, content starts flat.
  state_.al = rng_.chance(0.9) ? 1 : 0;
  state_.fl = rng_.chance(0.9) ? 1 : 0;
  state_.vl = rng_.chance(0.95) ? 1 : 0;
  mode_ = 0;
  stage_ = 0;
  return observe();
}

StepResult VREnv::step(int action) {
  if (action < 0 || action >= kVRActionCount)
    throw std::invalid_argument("vr step: action out of range");
  const auto a = static_cast<VRAction>(action);
  if (a == VRAction::enable_vr) mode_ = 1;
  else if (a == VRAction::disable_vr) mode_ = 0;

  const int next = profile_.sample_next(state_.index(), mode_, a, rng_);
  state_.al = (next >> 2) & 1;
  state_.fl = (next >> 1) & 1;
  state_.vl = next & 1;

  ++stage_;
  ++total_stages_;

  StepResult result;
  const double score =
      std::clamp(vr_expected_score(state_) + rng_.normal(0.0, noise_sd_), 0.0, 100.0);
  result.reward = score;
  result.utility_sample = score;
  result.utility_sample_valid = true;
  result.done = stage_ >= kStagesPerLecture;
  result.obs = observe();
  return result;
}

std::vector<double> VREnv::observe() const {
  return {static_cast<double>(state_.al), static_cast<double>(state_.fl),
          static_cast<double>(state_.vl), static_cast<double>(mode_)};
}

}  // namespace pearl
