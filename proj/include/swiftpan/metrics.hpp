#pragma once

#include "swiftpan/datagen.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace swiftpan {

class Model;

// Constants shared by every report so results are self-describing.
inline constexpr int kQBlock = 32;     // Q2n / Q-index block side at full resolution
inline constexpr double kQnrP = 1.0;   // D_lambda exponent
inline constexpr double kQnrQ = 1.0;   // D_s exponent

// Mean spectral angle in degrees. Pixels where either spectrum is the zero
// vector are skipped; all skipped is an error.
double sam(const Tensor& pred, const Tensor& gt);

// 100 / ratio * sqrt(mean_b (RMSE_b / mean_b(gt))^2)
double ergas(const Tensor& pred, const Tensor& gt, int ratio);

// Mean over bands of the Pearson correlation between 3x3 Laplacian
// (8-neighbour) high-pass responses on the valid interior. Bands with zero
// filtered variance are skipped.
double scc(const Tensor& pred, const Tensor& gt);

// Hypercomplex universal quality index (Q4/Q8 for 4/8 bands), block-wise
// over non-overlapping block x block tiles and averaged. Band count is padded
// with zero bands to a power of two. Degenerate tiles are skipped.
double q2n(const Tensor& pred, const Tensor& gt, int block = kQBlock);

// Wang-Bovik Q of two single-band [1,H,W] images, block-wise.
double q_index(const Tensor& a, const Tensor& b, int block);

// Spectral distortion: inter-band Q of pred versus inter-band Q of lrms.
double d_lambda(const Tensor& pred, const Tensor& lrms, int block = kQBlock);
// Spatial distortion: Q(pred_b, pan) versus Q(lrms_b, pan degraded to lrms size).
double d_s(const Tensor& pred, const Tensor& lrms, const Tensor& pan, int block = kQBlock);
inline double hqnr(double d_lambda_value, double d_s_value) { return (1.0 - d_lambda_value) * (1.0 - d_s_value); }

// Cayley-Dickson product of two hypercomplex numbers of equal power-of-two length.
std::vector<double> hypercomplex_mul(std::span<const double> a, std::span<const double> b);
std::vector<double> hypercomplex_conj(std::span<const double> a);

enum class Protocol { Reduced, Full };

std::string protocol_name(Protocol p);
Protocol parse_protocol(const std::string& name);
std::vector<std::string> protocol_columns(Protocol p);

struct EvalRow {
    int id = 0;
    std::vector<double> values;
};

struct EvalReport {
    Protocol protocol = Protocol::Reduced;
    std::vector<std::string> columns;
    std::vector<EvalRow> rows;
    std::vector<double> mean;
    std::vector<double> std;  // population std over rows
};

EvalReport make_report(Protocol protocol, std::vector<EvalRow> rows);
std::vector<double> evaluate_scene(const Tensor& pred, const ScenePair& scene, Protocol protocol, int ratio);
EvalReport evaluate(Model& model, std::span<const ScenePair> scenes, Protocol protocol);

std::string metric_constants_header();
void write_report_csv(const std::filesystem::path& path, const EvalReport& report);

}  // namespace swiftpan
