#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "lesionseg/data/augment.hpp"
#include "lesionseg/data/phantom.hpp"
#include "lesionseg/data/preprocess.hpp"
#include "lesionseg/nifti.hpp"
#include "lesionseg/volume.hpp"

namespace lesionseg {

inline constexpr const char* kDatasetFormat = "lesionseg-dataset-v1";

struct SubjectRecord {
  std::string id;
  std::string split;  // train | val | test
  Volume volume;
  Mask mask;
  bool has_nifti_header = false;
  nifti::Header nifti_header{};  // geometry template when sources were NIfTI
};

struct Dataset {
  std::vector<std::string> modalities;
  std::vector<std::string> class_names;
  std::array<double, 3> spacing = {1, 1, 1};
  std::vector<SubjectRecord> subjects;

  std::vector<const SubjectRecord*> split(const std::string& name) const {
    std::vector<const SubjectRecord*> out;
    for (const auto& s : subjects)
      if (s.split == name) out.push_back(&s);
    return out;
  }
};

// BraTS-style integer label maps -> nested binary channels.
inline Mask mask_from_labelmap(const Tensor<float>& labels, const std::vector<std::string>& classes) {
  Mask m;
  m.class_names = classes;
  const int D = labels.dim(0), H = labels.dim(1), W = labels.dim(2);
  const int K = static_cast<int>(classes.size());
  m.data = Tensor<uint8_t>({K, D, H, W});
  const int64_t n = labels.numel();
  if (K == 1) {
    for (int64_t i = 0; i < n; ++i) m.data[i] = labels[i] > 0.5f ? 1 : 0;
    return m;
  }
  if (K == 3 && classes[0] == "WT") {
    for (int64_t i = 0; i < n; ++i) {
      const int lbl = static_cast<int>(std::lround(labels[i]));
      if (lbl <= 0) continue;
      m.data[i] = 1;                                      // WT: any tumor label
      if (lbl == 1 || lbl == 4) m.data[n + i] = 1;        // TC: necrotic core + enhancing
      if (lbl == 4) m.data[2 * n + i] = 1;                // ET: enhancing only
    }
    return m;
  }
  throw DataError("unsupported label map for classes");
}

inline void save_dataset(const std::string& dir, const std::vector<PhantomSubject>& subjects,
                         const std::vector<std::string>& class_names,
                         const std::vector<std::string>& splits, const PhantomSpec* spec = nullptr) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json index;
  index["format"] = kDatasetFormat;
  if (!subjects.empty()) {
    index["modalities"] = subjects[0].volume.modality_names;
    index["classes"] = class_names;
    index["spacing"] = subjects[0].volume.spacing;
  }
  if (spec) index["phantom_spec"] = to_json(*spec);
  nlohmann::json list = nlohmann::json::array();
  for (size_t i = 0; i < subjects.size(); ++i) {
    const auto& s = subjects[i];
    const std::string vol_base = s.volume.subject_id + "_vol";
    const std::string mask_base = s.volume.subject_id + "_mask";
    save_volume_raw(s.volume, dir + "/" + vol_base);
    save_mask_raw(s.mask, dir + "/" + mask_base);
    list.push_back({{"id", s.volume.subject_id},
                    {"split", splits[i]},
                    {"volume_base", vol_base},
                    {"mask_base", mask_base}});
  }
  index["subjects"] = list;
  std::ofstream out(dir + "/dataset.json");
  if (!out) throw DataError("cannot write " + dir + "/dataset.json");
  out << index.dump(2) << "\n";
}

inline Dataset load_dataset(const std::string& dir, bool require_masks = true) {
  std::ifstream in(dir + "/dataset.json");
  if (!in) throw DataError("cannot open dataset index: " + dir + "/dataset.json");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw DataError("dataset index parse error: " + std::string(e.what()));
  }
  if (j.value("format", "") != kDatasetFormat)
    throw DataError(dir + ": unsupported dataset format '" + j.value("format", "") + "'");
  Dataset ds;
  ds.modalities = j.at("modalities").get<std::vector<std::string>>();
  ds.class_names = j.at("classes").get<std::vector<std::string>>();
  for (const auto& m : ds.modalities)
    if (!is_canonical_modality(m)) throw DataError("dataset declares unknown modality '" + m + "'");
  if (j.contains("spacing")) {
    auto sp = j.at("spacing").get<std::vector<double>>();
    ds.spacing = {sp[0], sp[1], sp[2]};
  }

  for (const auto& e : j.at("subjects")) {
    SubjectRecord rec;
    rec.id = e.at("id").get<std::string>();
    rec.split = e.value("split", "train");
    try {
    if (e.contains("volume_base")) {
      rec.volume = load_volume_raw(dir + "/" + e.at("volume_base").get<std::string>());
      if (require_masks || e.contains("mask_base"))
        rec.mask = load_mask_raw(dir + "/" + e.at("mask_base").get<std::string>());
    } else if (e.contains("volume_files")) {
      const auto files = e.at("volume_files").get<std::map<std::string, std::string>>();
      bool first = true;
      int D = 0, H = 0, W = 0, mi = 0;
      rec.volume.modality_names = ds.modalities;
      rec.volume.subject_id = rec.id;
      for (const auto& name : ds.modalities) {
        auto it = files.find(name);
        if (it == files.end())
          throw DataError("subject " + rec.id + ": missing modality file for " + name);
        auto img = nifti::read(dir + "/" + it->second);
        if (first) {
          D = img.data.dim(0);
          H = img.data.dim(1);
          W = img.data.dim(2);
          rec.volume.data = Tensor<float>({static_cast<int>(ds.modalities.size()), D, H, W});
          rec.volume.spacing = img.spacing;
          rec.nifti_header = img.header;
          rec.has_nifti_header = true;
          first = false;
        } else if (img.data.dim(0) != D || img.data.dim(1) != H || img.data.dim(2) != W) {
          throw DataError("subject " + rec.id + ": modality geometries differ (inputs must be co-registered)");
        }
        std::copy_n(img.data.ptr(), img.data.numel(), rec.volume.data.ptr() + int64_t(mi) * D * H * W);
        ++mi;
      }
      if (e.contains("mask_file")) {
        auto img = nifti::read(dir + "/" + e.at("mask_file").get<std::string>());
        if (img.data.dim(0) != D || img.data.dim(1) != H || img.data.dim(2) != W)
          throw DataError("subject " + rec.id + ": mask geometry differs from volume");
        rec.mask = mask_from_labelmap(img.data, ds.class_names);
      } else if (require_masks) {
        throw DataError("subject " + rec.id + ": mask_file required");
      }
    } else {
      throw DataError("subject " + rec.id + ": needs volume_base or volume_files");
    }
    } catch (const DataError& err) {
      const std::string what = err.what();
      if (what.rfind("subject ", 0) == 0) throw;
      throw DataError("subject " + rec.id + ": " + what);
    }
    auto violations = rec.volume.check_invariants();
    if (!violations.empty()) throw DataError("subject " + rec.id + ": " + violations[0]);
    ds.subjects.push_back(std::move(rec));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Slice-level training view: preprocessed axial slices with per-slice lesion
// areas for the difficulty-aware sampler.

struct SliceEntry {
  int subject = 0;
  int z = 0;
  int64_t lesion_area = 0;  // union over classes
};

struct SliceDataset {
  std::vector<Sample> slices;        // preprocessed, network-sized
  std::vector<SliceEntry> entries;
  std::vector<CropPadTransform> transforms;  // per subject
  std::array<double, 3> spacing = {1, 1, 1};

  int64_t size() const { return static_cast<int64_t>(slices.size()); }
};

// Normalizes each subject, crops/pads to the network input size, and slices
// along the axial axis. Background-only slices are retained.
inline SliceDataset build_slice_dataset(const std::vector<const SubjectRecord*>& subjects,
                                        int input_h, int input_w) {
  SliceDataset out;
  for (size_t si = 0; si < subjects.size(); ++si) {
    const SubjectRecord& rec = *subjects[si];
    Volume vol = rec.volume;  // copy: normalization is per-use
    zscore_normalize(vol);
    const int M = vol.modalities(), D = vol.depth(), H = vol.height(), W = vol.width();
    const int K = rec.mask.classes();
    out.spacing = vol.spacing;
    const auto tf = CropPadTransform::plan(H, W, input_h, input_w);
    out.transforms.push_back(tf);
    for (int z = 0; z < D; ++z) {
      Tensor<float> img({M, H, W});
      Tensor<uint8_t> msk({K, H, W});
      for (int m = 0; m < M; ++m)
        std::copy_n(vol.data.ptr() + (int64_t(m) * D + z) * H * W, int64_t(H) * W,
                    img.ptr() + int64_t(m) * H * W);
      for (int k = 0; k < K; ++k)
        std::copy_n(rec.mask.data.ptr() + (int64_t(k) * D + z) * H * W, int64_t(H) * W,
                    msk.ptr() + int64_t(k) * H * W);
      Sample s;
      s.image = crop_or_pad_planes(img, tf);
      s.image.shape = {M, input_h, input_w};
      s.mask = crop_or_pad_planes(msk, tf);
      s.mask.shape = {K, input_h, input_w};
      SliceEntry e;
      e.subject = static_cast<int>(si);
      e.z = z;
      const int64_t per_class = int64_t(input_h) * input_w;
      for (int64_t i = 0; i < per_class; ++i) {
        bool any = false;
        for (int k = 0; k < K && !any; ++k) any = s.mask[int64_t(k) * per_class + i] != 0;
        e.lesion_area += any ? 1 : 0;
      }
      out.entries.push_back(e);
      out.slices.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace lesionseg
