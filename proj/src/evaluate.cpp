#include "tcace/evaluate.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "tcace/parallel.hpp"

namespace fs = std::filesystem;

namespace tcace {

namespace {

// JSON has no infinity; undefined distances are written as null.
nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json image_json(const ImageMetrics& m) { return {{"mse", m.mse}, {"psnr", m.psnr}, {"ssim", m.ssim}}; }

ImageMetrics image_metrics(const Tensor& predicted, const Tensor& target) {
  const double e = mse(predicted, target);
  return {e, psnr_from_mse(e), ssim(predicted, target)};
}

}  // namespace

void write_attention_csv(const fs::path& path, const AttentionTrace& trace) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "query_block,key_block,weight\n";
  os.precision(17);
  for (std::size_t q = 0; q < trace.block_weights.size(); ++q) {
    for (std::size_t k = 0; k < trace.block_weights[q].size(); ++k) {
      os << q << ',' << k << ',' << trace.block_weights[q][k] << '\n';
    }
  }
  if (!os) throw IoError("write failed: " + path.string());
}

EvaluationReport evaluate_cases(const TcaceModel* model, std::span<const EvalCase> cases, const std::string& split,
                                const std::optional<fs::path>& attention_dir) {
  EvaluationReport report;
  report.split = split;
  report.cases.resize(cases.size());
  if (attention_dir) fs::create_directories(*attention_dir);

  parallel_for(cases.size(), [&](std::size_t c) {
    NoGradScope no_grad;
    const CaseRecord& rec = *cases[c].record;
    CaseMetrics& m = report.cases[c];
    m.id = cases[c].id;
    m.label = static_cast<int>(rec.label);

    std::array<Tensor, kPhaseCount> images;
    Tensor mask;
    if (model) {
      std::vector<AttentionTrace> traces;
      RunOptions options;
      if (attention_dir) options.traces = &traces;
      const PredictionBundle b = model->run(rec.ncmri, rec.mask, rec.times, options);
      for (std::size_t i = 0; i < kPhaseCount; ++i) {
        images[i] = b.phases[i].image;
        m.per_phase_probs[i] = b.classifier->per_phase_probs[i];
      }
      mask = b.aggregated_mask;
      m.prob_malignant = b.classifier->class_probs[1];
      m.predicted = b.classifier->class_probs[1] > b.classifier->class_probs[0] ? 1 : 0;
      m.signal = b.signal;
      m.signal_labels = b.signal_labels;
      if (attention_dir) {
        for (std::size_t i = 0; i < kPhaseCount; ++i) {
          write_attention_csv(*attention_dir / (m.id + "_" + kPhaseNames[i] + ".csv"), traces[i]);
        }
      }
    } else {
      images = rec.phases;
      mask = rec.mask;
      m.predicted = m.label;
      m.prob_malignant = m.label;
      m.per_phase_probs.fill(static_cast<double>(m.label));
    }
    for (std::size_t i = 0; i < kPhaseCount; ++i) m.phases[i] = image_metrics(images[i], rec.phases[i]);
    m.copy_ncmri_psnr = psnr(rec.ncmri, rec.phases[2]);
    m.dice = dice(mask, rec.mask);
    m.iou = iou(mask, rec.mask);
    m.surface = surface_distances(mask, rec.mask);
  });

  const double n = static_cast<double>(cases.size());
  std::vector<int> predictions, labels;
  std::size_t defined = 0;
  for (const auto& m : report.cases) {
    for (std::size_t i = 0; i < kPhaseCount; ++i) {
      report.phases[i].mse += m.phases[i].mse / n;
      report.phases[i].psnr += m.phases[i].psnr / n;
      report.phases[i].ssim += m.phases[i].ssim / n;
    }
    report.copy_ncmri_psnr += m.copy_ncmri_psnr / n;
    report.dice += m.dice / n;
    report.iou += m.iou / n;
    if (m.surface.defined) {
      report.hd95 += m.surface.hd95;
      report.asd += m.surface.asd;
      ++defined;
    } else {
      ++report.undefined_surface_cases;
    }
    predictions.push_back(m.predicted);
    labels.push_back(m.label);
  }
  if (defined) {
    report.hd95 /= static_cast<double>(defined);
    report.asd /= static_cast<double>(defined);
  } else {
    report.hd95 = report.asd = std::numeric_limits<double>::infinity();
  }
  report.classification = classification_metrics(predictions, labels);
  return report;
}

nlohmann::json EvaluationReport::to_json() const {
  nlohmann::json phase_json = nlohmann::json::object();
  for (std::size_t i = 0; i < kPhaseCount; ++i) phase_json[kPhaseNames[i]] = image_json(phases[i]);

  const auto& c = classification;
  nlohmann::json cls{{"accuracy", c.accuracy},
                     {"sensitivity", c.sensitivity},
                     {"specificity", c.specificity},
                     {"precision", c.precision},
                     {"f1", c.f1},
                     {"confusion", {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}}},
                     {"undefined", {{"sensitivity", c.sensitivity_undefined},
                                    {"specificity", c.specificity_undefined},
                                    {"f1", c.f1_undefined}}}};

  nlohmann::json case_list = nlohmann::json::array();
  for (const auto& m : cases) {
    nlohmann::json per_phase = nlohmann::json::object();
    for (std::size_t i = 0; i < kPhaseCount; ++i) per_phase[kPhaseNames[i]] = image_json(m.phases[i]);
    case_list.push_back({{"id", m.id},
                         {"label", m.label},
                         {"predicted", m.predicted},
                         {"prob_malignant", m.prob_malignant},
                         {"phases", per_phase},
                         {"copy_ncmri_psnr", m.copy_ncmri_psnr},
                         {"dice", m.dice},
                         {"iou", m.iou},
                         {"hd95", finite_or_null(m.surface.hd95)},
                         {"asd", finite_or_null(m.surface.asd)},
                         {"surface_defined", m.surface.defined},
                         {"per_phase_probs", m.per_phase_probs},
                         {"signal", m.signal},
                         {"signal_labels", m.signal_labels}});
  }

  return {{"schema_version", kReportSchemaVersion},
          {"split", split},
          {"case_count", cases.size()},
          {"context", context},
          {"aggregate",
           {{"phases", phase_json},
            {"copy_ncmri_psnr_delay", copy_ncmri_psnr},
            {"segmentation",
             {{"dice", dice},
              {"iou", iou},
              {"hd95", finite_or_null(hd95)},
              {"asd", finite_or_null(asd)},
              {"undefined_surface_cases", undefined_surface_cases}}},
            {"classification", cls}}},
          {"cases", case_list}};
}

}  // namespace tcace
