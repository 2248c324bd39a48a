#include "anacto/dataset.hpp"

#include <algorithm>
#include <map>

#include "anacto/errors.hpp"

namespace anacto {

LoadedClip load_clip(const std::filesystem::path& clip_dir) {
  LoadedClip clip;
  clip.dir = clip_dir;
  clip.id = clip_dir.filename().string();
  clip.meta = read_clip_meta(clip_dir);
  clip.annotations = read_annotations_jsonl(clip_dir / "annotations.jsonl");
  return clip;
}

std::vector<LoadedClip> load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw DataError("load_dataset: not a directory: " + dir.string());
  }
  std::vector<std::pair<long, std::filesystem::path>> found;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    if (name.rfind("clip_", 0) != 0) continue;
    try {
      found.emplace_back(std::stol(name.substr(5)), entry.path());
    } catch (const std::exception&) {
      throw DataError("load_dataset: malformed clip directory name: " + name);
    }
  }
  if (found.empty()) throw DataError("load_dataset: no clip_<n> directories under " + dir.string());
  std::sort(found.begin(), found.end());
  std::vector<LoadedClip> clips;
  clips.reserve(found.size());
  for (const auto& [n, path] : found) clips.push_back(load_clip(path));
  return clips;
}

std::optional<ModelSample> make_sample(const LoadedClip& clip, const ModelConfig& model_cfg,
                                       const SamplePrepConfig& prep) {
  const auto nao = curate_nao_gt(clip.annotations, clip.meta.action_start_index, prep.lookup);
  if (!nao.has_value()) return std::nullopt;

  const ClipWindows windows =
      sample_frames(clip.meta.fps, clip.meta.action_start_index, prep.tau_a, prep.num_frames);

  std::map<int, const AnnotationRecord*> by_index;
  for (const AnnotationRecord& rec : clip.annotations) by_index[rec.frame_index] = &rec;

  const Extent2 native{static_cast<double>(clip.meta.native_width),
                       static_cast<double>(clip.meta.native_height)};
  const Extent2 model_px{static_cast<double>(model_cfg.image_size),
                         static_cast<double>(model_cfg.image_size)};

  ModelSample sample;
  sample.clip_id = clip.id;
  sample.windows = windows;
  sample.nao_gt = rescale_box_pair(*nao, native, model_px);

  for (const int frame_index : windows.sampled_indices) {
    const auto it = by_index.find(frame_index);
    if (it == by_index.end()) {
      throw DataError("make_sample: clip " + clip.id + " has no annotation record for sampled frame " +
                      std::to_string(frame_index));
    }
    const AnnotationRecord& rec = *it->second;

    Raster frame = read_ppm(clip_frame_path(clip.dir, frame_index));
    if (frame.width != model_cfg.image_size || frame.height != model_cfg.image_size) {
      frame = resize_nearest(frame, model_cfg.image_size, model_cfg.image_size);
    }
    sample.frames.push_back(std::move(frame));

    DetectionSet dets = record_to_detections(rec, model_cfg.num_categories);
    dets = threshold_detections(dets, prep.det_threshold);
    for (Detection& d : dets.slots) {
      if (!d.empty()) d.box = rescale_box(d.box, native, model_px);
    }
    sample.dets.push_back(std::move(dets));

    sample.cao_gt.push_back(rescale_box_pair(active_objects_to_boxpair(rec), native, model_px));
  }
  return sample;
}

SampleSet prepare_samples(const std::vector<LoadedClip>& clips, const ModelConfig& model_cfg,
                          const SamplePrepConfig& prep) {
  SampleSet set;
  for (const LoadedClip& clip : clips) {
    auto sample = make_sample(clip, model_cfg, prep);
    if (sample.has_value()) {
      set.samples.push_back(std::move(*sample));
    } else {
      ++set.excluded;
    }
  }
  return set;
}

}  // namespace anacto
