#pragma once

#include <optional>
#include <string>
#include <vector>

namespace diglot {

enum class Dimension { diglossia, fidelity };

// One evaluation result for a (model, checkpoint, decode config, dataset,
// variety) combination. Diglossia is ChrF++ in [0,100], fidelity the
// classifier-backed dialect score in [0,1]; a row carries at least one.
struct EvalRow {
    std::string model_id;
    std::string checkpoint;
    std::string dataset_id;
    std::string variety;
    std::string direction;  // "src->tgt" for translation rows, empty otherwise
    double top_p = 1.0;
    double temperature = 0.0;
    std::optional<double> diglossia;
    std::optional<double> fidelity;
    std::optional<double> prefix_kept_rate;
};

// Unweighted mean over (variety, dataset) cells, each cell the mean of its
// rows carrying the dimension. Errors when no row carries it.
double macro_average(const std::vector<EvalRow>& rows, Dimension dimension);

void write_report_csv(const std::string& path, const std::vector<EvalRow>& rows);
std::vector<EvalRow> read_report_csv(const std::string& path);
void write_report_jsonl(const std::string& path, const std::vector<EvalRow>& rows);

// Fixed-precision float formatting shared by every emitted table, so reports
// are byte-stable across runs.
std::string format_score(double value);

}  // namespace diglot
