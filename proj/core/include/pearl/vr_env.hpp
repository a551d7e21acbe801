#pragma once

#include <array>
#include <string>
#include <string_view>

#include "pearl/env.hpp"
#include "pearl/rng.hpp"

namespace pearl {

// Binary human-state triple: alertness (1 = alert), fatigue (1 = fresh),
// vertigo (1 = no vertigo). State ids follow 4*al + 2*fl + vl + 1, so
// S1 = (0,0,0) is the worst state and S8 = (1,1,1) the best.
struct VRState {
  int al = 1;
  int fl = 1;
  int vl = 1;

  int index() const { return 4 * al + 2 * fl + vl; }  // 0..7
  int id() const { return index() + 1; }              // S1..S8
};

enum class VRAction : int {
  take_break = 0,
  enable_vr = 1,
  disable_vr = 2,
  change_content = 3,
  no_change = 4,
};
constexpr int kVRActionCount = 5;
constexpr int kVRStateCount = 8;

const char* vr_action_name(VRAction a);

// Per-profile human dynamics: a full row-stochastic 8x8 matrix for every
// (content mode after the action, action) pair. Matrices are assembled from
// per-bit conditional probabilities; 3D exposure drives the vertigo-onset
// rate that separates the tolerance groups.
struct ProfileMDP {
  std::string name;
  double vertigo_onset_3d = 0.05;  // P(vl 1 -> 0) per stage under 3D
  // matrix[mode][action][from][to], mode 0 = 2D, 1 = 3D
  std::array<std::array<std::array<std::array<double, 8>, 8>, kVRActionCount>, 2> matrix{};

  const std::array<std::array<double, 8>, 8>& transition_matrix(int mode, VRAction a) const;
  int sample_next(int from_index, int mode, VRAction a, Rng& rng) const;
  void validate() const;  // every row sums to 1 within 1e-12

  void dump_csv(const std::string& path) const;
  static ProfileMDP load_csv(const std::string& path);
};

// P1 / P2 / P3 in decreasing VR tolerance. Matrices are fixed design
// constants; the seed parameter is accepted for interface stability and does
// not affect them.
std::array<ProfileMDP, 3> make_vr_profiles(std::uint64_t seed = 0);
ProfileMDP vr_profile(std::string_view id);  // "P1" | "P2" | "P3"

// Expected quiz score for a state, in [0, 100]; maximal at S8, zero at S1.
double vr_expected_score(const VRState& s);

// One simulated student. A step is one lecture stage; an episode is a
// five-stage lecture. enable/disable VR switches the content mode
// deterministically, then the human state evolves per the profile MDP.
// Reward is the stage quiz score: expected score of the next state plus
// clamped Gaussian noise.
class VREnv : public Environment {
 public:
  VREnv(ProfileMDP profile, std::uint64_t seed, double noise_sd = 8.0);

  int obs_dim() const override { return 4; }  // al, fl, vl, mode
  int action_count() const override { return kVRActionCount; }
  std::vector<double> reset() override;
  StepResult step(int action) override;
  int state_id() const override { return state_.index(); }
  int state_id_count() const override { return kVRStateCount; }
  int truth_label() const override { return state_.index(); }
  int truth_label_count() const override { return kVRStateCount; }
  long clock() const override { return total_stages_; }
  int phase_in_cycle() const override { return stage_; }
  int cycle_length() const override { return kStagesPerLecture; }
  UtilityKind utility_kind() const override { return UtilityKind::mean_score; }

  const VRState& human_state() const { return state_; }
  int content_mode() const { return mode_; }  // 0 = 2D, 1 = 3D

  static constexpr int kStagesPerLecture = 5;

 private:
  std::vector<double> observe() const;

  ProfileMDP profile_;
  Rng rng_;
  double noise_sd_;
  VRState state_;
  int mode_ = 0;
  int stage_ = 0;
  long total_stages_ = 0;
};

}  // namespace pearl
