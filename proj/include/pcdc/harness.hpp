#ifndef PCDC_HARNESS_HPP
#define PCDC_HARNESS_HPP

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pcdc/allocator.hpp"
#include "pcdc/checkpoint.hpp"
#include "pcdc/config.hpp"

namespace pcdc {

// Encoder + denoiser + schedule, as trained and checkpointed together.
struct ModelBundle {
    EncoderNet encoder;
    DenoiserNet denoiser;
    VarianceSchedule schedule;
    StepLadder ladder;
    std::vector<double> sigma;  // entropy fit over the training set

    ModelBundle(const RunConfig& cfg, Rng& rng);
    void save(const std::string& path) const;
    static ModelBundle load(const std::string& path, const RunConfig& cfg);
};

std::vector<std::string> list_images(const std::string& dir);

struct TrainStats {
    int steps = 0;
    double first_rate = 0, last_rate = 0;  // bits per latent element
    double first_mse = 0, last_mse = 0;    // noise-prediction error
};

// Joint training: rate term on a noise-relaxed latent plus the denoiser's
// epsilon-prediction MSE; conditioning alternates between the relaxed
// latent and hard-quantized latents under random allocations.
TrainStats cmd_train(const RunConfig& cfg, const std::string& input_dir,
                     const std::string& checkpoint_path, const std::string& log_csv_path);

enum class CompressMode { Ppo, UniformAuto, UniformFixed };
struct ModeSpec {
    CompressMode mode = CompressMode::Ppo;
    int k = 0;  // 0-based action for UniformFixed
};
ModeSpec parse_mode(const std::string& text);

// Keeps the policy, value net and dual variable alive across images;
// reset_per_image reinitializes them before every adaptation instead.
class PpoRunner {
public:
    explicit PpoRunner(const RunConfig& cfg);
    AdaptResult adapt(CodecAllocationEnv& env);
    DualController& dual() { return dual_; }

private:
    void reset_nets();

    RunConfig cfg_;
    Rng base_rng_;
    uint64_t images_seen_ = 0;
    std::unique_ptr<PolicyNet> policy_;
    std::unique_ptr<ValueNet> value_;
    DualController dual_;
};

struct CompressResult {
    Bitstream bitstream;
    std::string method_tag;  // "pcdc" or "uniform-<k>"
    double r_max = 0;        // 0 when no budget was given
    std::vector<AdaptReportRow> report;
    std::vector<int> actions;
};

CompressResult compress_image(const RunConfig& cfg, const ImagePlane& image,
                              const ModelBundle& models, const ModeSpec& mode,
                              PpoRunner* runner);

void cmd_compress(const RunConfig& cfg, const std::string& image_path,
                  const std::string& checkpoint_path, const std::string& out_path,
                  const std::string& mode);

ImagePlane cmd_decompress(const RunConfig& cfg, const std::string& bitstream_path,
                          const std::string& checkpoint_path, const std::string& out_path,
                          std::optional<uint64_t> seed);

struct EvaluateRow {
    std::string name;
    MetricReport report;
    double bpp = 0, ratio = 0;  // 0 when no sibling bitstream was found
};

struct EvaluateResult {
    std::vector<EvaluateRow> rows;
    EvaluateRow mean;
    std::vector<std::string> unpaired;
};

EvaluateResult cmd_evaluate(const RunConfig& cfg, const std::string& originals_dir,
                            const std::string& reconstructions_dir,
                            const std::string& out_csv_path);

struct RDRecord {
    std::string method;
    double budget_bits = 0;
    double bpp = 0;
    double ratio = 0;
    MetricReport report;
    int images = 0;
};

std::vector<RDRecord> cmd_rd_sweep(const RunConfig& cfg, const std::string& input_dir,
                                   const std::string& checkpoint_path,
                                   const std::vector<double>& budgets,
                                   const std::vector<std::string>& modes,
                                   const std::string& out_csv_path);

// CLI entry point; returns the process exit code
// (0 ok, 2 usage, 3 infeasible budget, 4 data error).
int run_cli(int argc, const char* const* argv);

}  // namespace pcdc

#endif
