#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "realanon/annotations.hpp"
#include "realanon/anonymizer.hpp"
#include "realanon/checkpoint.hpp"
#include "realanon/dataset_forge.hpp"
#include "realanon/evaluation.hpp"
#include "realanon/io.hpp"
#include "realanon/latent_edit.hpp"
#include "realanon/service.hpp"
#include "realanon/tracking.hpp"
#include "realanon/training.hpp"

namespace fs = std::filesystem;
using namespace realanon;

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const std::string& path, const Json& j) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
}

std::vector<Json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<Json> lines;
  std::string line;
  while (std::getline(in, line))
    if (line.find_first_not_of(" \t\r") != std::string::npos) lines.push_back(Json::parse(line));
  return lines;
}

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> list_images(const std::string& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

/// Sidecar annotation file next to an image: <stem>.json.
std::string sidecar_for(const fs::path& image) { return (image.parent_path() / (image.stem().string() + ".json")).string(); }

std::vector<FusedDetection> detect_image(const ImageTensor& image, const std::string& annotations,
                                         const SourceThresholds& thresholds, std::vector<AdapterFailure>* failures) {
  std::vector<RawDetection> records;
  if (!annotations.empty() && fs::exists(annotations)) records = load_annotations(annotations);
  AnnotationAdapter adapter("annotations", std::move(records));
  DetectorAdapter* adapters[] = {&adapter};
  EnsembleResult raw = detect_all(image, adapters, thresholds);
  if (failures) *failures = raw.failures;
  return fuse(raw.detections, image.height(), image.width());
}

Json detections_json(const std::vector<FusedDetection>& dets) {
  Json arr = Json::array();
  for (const auto& d : dets) arr.push_back(to_json(d));
  return arr;
}

std::shared_ptr<const DataSource> open_data(const std::string& data, const TrainConfig& config) {
  if (data == "toy")
    return std::make_shared<ToyDataSource>(
        ToyFigureDataset(1u << 20, config.generator.height, config.generator.width, mix_seed(config.seed, 77)));
  return std::make_shared<DirectoryDataSource>(data);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Realistic anonymization toolkit"};
  app.require_subcommand(1);

  // detect
  std::string image_path, annotations_path, profile = "default", out_path;
  auto* detect = app.add_subcommand("detect", "Run the detector ensemble and fuse detections");
  detect->add_option("--image", image_path, "Input image")->required()->check(CLI::ExistingFile);
  detect->add_option("--annotations", annotations_path, "Annotation-stub records (default: <image>.json sidecar)");
  detect->add_option("--profile", profile, "Threshold profile")->check(CLI::IsMember({"default", "market1501"}));
  detect->add_option("--out", out_path, "Output JSON (default stdout)");

  // track
  std::string track_in;
  TrackerOptions track_opts;
  auto* track = app.add_subcommand("track", "Track fused detections over a frame sequence");
  track->add_option("--detections", track_in,
                    "JSON-lines: {frame, height, width, detections: [annotation records]}")
      ->required()
      ->check(CLI::ExistingFile);
  track->add_option("--iou-gate", track_opts.iou_gate);
  track->add_option("--max-misses", track_opts.max_misses);
  track->add_option("--seed", track_opts.seed);
  track->add_option("--out", out_path, "Output JSON-lines (default stdout)");

  // synthesize
  std::string ckpt, mask_path, cse_path;
  std::uint64_t seed = 0;
  auto* synth = app.add_subcommand("synthesize", "Inpaint one crop with a generator checkpoint");
  synth->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  synth->add_option("--input", image_path)->required()->check(CLI::ExistingFile);
  synth->add_option("--mask", mask_path, "Keep mask: white = keep, black = synthesize")->required();
  synth->add_option("--cse", cse_path, "Dense embedding .npy (C,H,W)");
  synth->add_option("--seed", seed);
  synth->add_option("--out", out_path)->required();

  // train
  std::string config_path, data = "toy", run_dir = "runs", resume_path;
  int steps = -1, save_every = 500, eval_every = 0;
  auto* train = app.add_subcommand("train", "Adversarial training");
  train->add_option("--config", config_path, "key: value config file");
  train->add_option("--data", data, "Dataset directory with manifest.jsonl, or 'toy'");
  train->add_option("--out", run_dir, "Run directory");
  train->add_option("--steps", steps, "Override the configured step count");
  train->add_option("--resume", resume_path, "Training checkpoint to resume from");
  train->add_option("--save-every", save_every);
  train->add_option("--eval-every", eval_every, "Frechet distance every N steps (0 = off)");

  // edit
  std::string prompt, edit_out = "directions";
  DirectionSearchOptions dir_opts;
  int centers_k = 0, centers_n = 10000;
  auto* edit = app.add_subcommand("edit", "Find a global style direction for a prompt");
  edit->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  edit->add_option("--prompt", prompt, "Prompt understood by the scorer")->required();
  edit->add_option("--n", dir_opts.n_images);
  edit->add_option("--steps", dir_opts.steps);
  edit->add_option("--lr", dir_opts.learning_rate);
  edit->add_option("--identity-weight", dir_opts.identity_weight);
  edit->add_option("--seed", dir_opts.seed);
  edit->add_option("--centers", centers_k, "Also fit K truncation centers");
  edit->add_option("--center-samples", centers_n);
  edit->add_option("--out", edit_out, "Output directory");

  // forge
  std::string forge_in, rules = "fdh", forge_out = "dataset", partition_path;
  double val_fraction = 0.02;
  auto* forge = app.add_subcommand("forge", "Filter candidate records into a dataset");
  forge->add_option("--in", forge_in, "Candidate records (JSON-lines)")->required()->check(CLI::ExistingFile);
  forge->add_option("--rules", rules)->check(CLI::IsMember({"fdh", "fdf256"}));
  forge->add_option("--partition", partition_path, "Vertex-to-part JSON (fdh)");
  forge->add_option("--val-fraction", val_fraction);
  forge->add_option("--out", forge_out);

  // anonymize
  std::string in_path, mode_name = "gan", ckpt_dir;
  double psi = 1.0;
  auto* anon = app.add_subcommand("anonymize", "Anonymize an image or a directory of images");
  anon->add_option("--in", in_path, "Image or directory (annotations from <stem>.json)")->required();
  anon->add_option("--mode", mode_name)->check(CLI::IsMember({"gan", "pixelate8", "pixelate16", "maskout"}));
  anon->add_option("--ckpt-dir", ckpt_dir, "Directory with body_cse/body_plain/face checkpoints");
  anon->add_option("--seed", seed);
  anon->add_option("--psi", psi);
  anon->add_option("--profile", profile)->check(CLI::IsMember({"default", "market1501"}));
  anon->add_option("--out", out_path, "Output image or directory")->required();

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Evaluation harnesses");
  evaluate->require_subcommand(1);
  std::string real_dir, fake_dir, extractor = "random_projection";
  int feat_h = 64, feat_w = 64;
  auto* fid = evaluate->add_subcommand("fid", "Frechet distance between two image folders");
  fid->add_option("--real", real_dir)->required()->check(CLI::ExistingDirectory);
  fid->add_option("--fake", fake_dir)->required()->check(CLI::ExistingDirectory);
  fid->add_option("--extractor", extractor)->check(CLI::IsMember({"pixels", "random_projection"}));
  fid->add_option("--feature-height", feat_h);
  fid->add_option("--feature-width", feat_w);
  fid->add_option("--seed", seed);
  fid->add_option("--out", out_path);
  std::string gallery_dir, query_dir, labels;
  auto* reid = evaluate->add_subcommand("reid", "Re-identification mAP / rank-1 with pixel features");
  reid->add_option("--gallery", gallery_dir)->required()->check(CLI::ExistingDirectory);
  reid->add_option("--queries", query_dir)->required()->check(CLI::ExistingDirectory);
  reid->add_option("--labels", labels, "CSV: file,identity[,source]")->required()->check(CLI::ExistingFile);
  reid->add_option("--feature-height", feat_h);
  reid->add_option("--feature-width", feat_w);
  reid->add_option("--out", out_path);

  // serve
  std::string host = "0.0.0.0";
  int port = 8080;
  ServiceConfig service_config;
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  serve->add_option("--host", host);
  serve->add_option("--port", port);
  serve->add_option("--ckpt-dir", ckpt_dir, "Checkpoint directory (default: $REALANON_CKPT_DIR)");
  serve->add_option("--token", service_config.token, "Static bearer token (default: $REALANON_TOKEN)");
  serve->add_option("--profile", profile)->check(CLI::IsMember({"default", "market1501"}));

  CLI11_PARSE(app, argc, argv);

  try {
    const SourceThresholds thresholds = SourceThresholds::profile(profile);

    if (*detect) {
      const ImageTensor image = io::load_image(image_path);
      if (annotations_path.empty()) annotations_path = sidecar_for(image_path);
      std::vector<AdapterFailure> failures;
      const auto dets = detect_image(image, annotations_path, thresholds, &failures);
      Json fj = Json::array();
      for (const auto& f : failures) fj.push_back({{"adapter", f.adapter}, {"message", f.message}});
      write_json(out_path, {{"height", image.height()}, {"width", image.width()}, {"detections", detections_json(dets)},
                            {"failures", fj}});
    } else if (*track) {
      Tracker tracker(track_opts);
      std::ofstream file;
      if (!out_path.empty()) file.open(out_path);
      std::ostream& out = out_path.empty() ? std::cout : file;
      for (const Json& frame : read_jsonl(track_in)) {
        std::vector<RawDetection> raw;
        for (const auto& r : frame.at("detections")) raw.push_back(raw_from_json(r, fs::path(track_in).parent_path().string()));
        auto fused = fuse(raw, frame.at("height").get<int>(), frame.at("width").get<int>());
        Json tracks = Json::array();
        for (const auto& t : tracker.feed(frame.at("frame").get<int>(), std::move(fused))) {
          const Box& b = t.detection.bbox;
          tracks.push_back({{"track_id", t.track_id},
                            {"category", to_string(t.detection.category)},
                            {"bbox", {b.x0, b.y0, b.x1, b.y1}}});
        }
        out << Json{{"frame", frame.at("frame")}, {"tracks", tracks}}.dump() << "\n";
      }
    } else if (*synth) {
      Generator<float> g = load_generator(ckpt);
      const ImageTensor crop = resize_bilinear(io::load_image(image_path), g.config().height, g.config().width);
      const BinaryMask keep = resize_nearest(io::load_mask(mask_path), g.config().height, g.config().width);
      EmbeddingMap cse;
      if (!cse_path.empty()) cse = resize_bilinear(io::load_npy_embedding(cse_path), g.config().height, g.config().width);
      if (g.config().condition == Conditioning::DenseEmbedding && cse.empty())
        throw ConfigError("this generator needs --cse");
      const auto out = synthesize(g, crop, keep, cse.empty() ? nullptr : &cse, LatentCode::sample(g.config().z_dim, seed));
      io::save_image(out_path, out);
    } else if (*train) {
      fs::create_directories(run_dir);
      std::unique_ptr<Trainer> trainer;
      TrainConfig config = config_path.empty() ? TrainConfig::toy() : parse_train_config(read_text(config_path));
      if (steps >= 0) config.steps = steps;
      auto source = open_data(data, config);
      if (!resume_path.empty()) {
        trainer = Trainer::resume(resume_path, source);
      } else {
        trainer = std::make_unique<Trainer>(config, source);
      }
      write_json((fs::path(run_dir) / "config.json").string(), to_json(trainer->config()));
      MetricsLog log((fs::path(run_dir) / "metrics.jsonl").string());

      // Held-out evaluation set for the Frechet distance.
      std::vector<TrainingSample> held;
      std::unique_ptr<FeatureExtractor> fx;
      std::optional<FeatureStatistics> real_stats;
      if (eval_every > 0) {
        const auto& gc = trainer->config().generator;
        fx = make_extractor("random_projection", gc.height, gc.width, 42);
        std::vector<ImageTensor> reals;
        for (std::size_t i = 0; i < 256 && i < source->size(); ++i) {
          held.push_back(source->sample(source->size() - 1 - i));
          reals.push_back(held.back().image);
        }
        real_stats = compute_statistics(reals, *fx);
      }
      auto evaluate_fd = [&]() {
        std::vector<ImageTensor> fakes;
        auto& g = trainer->generator_ema();
        for (std::size_t i = 0; i < held.size(); ++i) {
          const auto& s = held[i];
          fakes.push_back(synthesize(g, s.image, s.region.inverted(), s.embedding.empty() ? nullptr : &s.embedding,
                                     LatentCode::sample(g.config().z_dim, mix_seed(555, i))));
        }
        return frechet_distance(*real_stats, compute_statistics(fakes, *fx));
      };

      const auto total = trainer->config().steps;
      while (trainer->current_step() < total) {
        StepResult r = trainer->step();
        if (eval_every > 0 && r.step % eval_every == 0) r.eval_metric = evaluate_fd();
        if (r.step % trainer->config().log_every == 0 || r.eval_metric) {
          log.append(to_json(r));
          std::cout << to_json(r).dump() << std::endl;
        }
        if (save_every > 0 && trainer->current_step() % save_every == 0)
          trainer->save((fs::path(run_dir) / "last.ckpt").string());
      }
      trainer->save((fs::path(run_dir) / "last.ckpt").string());
      save_generator((fs::path(run_dir) / "generator.ckpt").string(), trainer->generator_ema());
    } else if (*edit) {
      Generator<float> g = load_generator(ckpt);
      fs::create_directories(edit_out);
      if (!SyntheticScorer::supports(prompt))
        throw ConfigError("prompt '" + prompt + "' is not understood by the built-in scorer (bright, dark, red, green, blue)");
      SyntheticScorer scorer;
      ToyDataSource conditions(ToyFigureDataset(1u << 20, g.config().height, g.config().width, mix_seed(dir_opts.seed, 9)));
      EditDirection d = find_global_direction(g, scorer, prompt, conditions, dir_opts);
      const std::string file = (fs::path(edit_out) / "directions.json").string();
      std::vector<EditDirection> all;
      if (fs::exists(file)) all = load_directions(file);
      std::erase_if(all, [&](const EditDirection& e) { return e.name == d.name; });
      all.push_back(d);
      save_directions(file, all);
      if (centers_k > 0) save_centers((fs::path(edit_out) / "centers.json").string(), fit_centers(g, centers_n, centers_k, dir_opts.seed));
      std::cout << Json{{"direction", d.name}, {"norm", d.norm()}, {"file", file}}.dump() << "\n";
    } else if (*forge) {
      fs::create_directories(forge_out);
      std::ofstream verdicts(fs::path(forge_out) / "verdicts.jsonl");
      std::ofstream manifest(fs::path(forge_out) / "manifest.jsonl");
      const std::string base = fs::path(forge_in).parent_path().string();
      std::size_t accepted = 0, total = 0;
      if (rules == "fdh") {
        VertexPartition partition = partition_path.empty() ? throw ConfigError("fdh rules need --partition")
                                                           : VertexPartition::load(partition_path, default_body_parts());
        FdhFilter filter(FdhRules{}, partition);
        for (const Json& j : read_jsonl(forge_in)) {
          const CandidateRecord rec = candidate_from_json(j, base);
          Json v;
          try {
            v = to_json(filter(rec));
          } catch (const IncompleteRecordError& e) {
            v = {{"accepted", false}, {"error", e.what()}, {"missing_field", e.field()}};
          }
          v["id"] = rec.id;
          ++total;
          if (v["accepted"].get<bool>()) {
            ++accepted;
            manifest << Json{{"id", rec.id}, {"split", assign_split(rec.source_image_id, val_fraction)},
                             {"record", j}}.dump()
                     << "\n";
          }
          verdicts << v.dump() << "\n";
        }
      } else {
        for (const Json& j : read_jsonl(forge_in)) {
          FaceRecord rec;
          rec.id = j.at("id").get<std::string>();
          rec.source_image_id = j.value("source_image_id", rec.id);
          rec.image = io::load_image((fs::path(base) / j.at("image").get<std::string>()).string());
          const auto b = j.at("bbox");
          rec.bbox = {b[0].get<float>(), b[1].get<float>(), b[2].get<float>(), b[3].get<float>()};
          const Fdf256Result r = build_fdf256(rec);
          ++total;
          Json v{{"id", rec.id}, {"accepted", r.accepted}};
          if (!r.accepted) v["reason"] = r.reason;
          if (r.accepted) {
            ++accepted;
            const std::string split = assign_split(rec.source_image_id, val_fraction);
            fs::create_directories(fs::path(forge_out) / split);
            const std::string rel = split + "/" + rec.id + ".png";
            io::save_image((fs::path(forge_out) / rel).string(), r.face);
            manifest << Json{{"id", rec.id}, {"split", split}, {"image", rel}}.dump() << "\n";
          }
          verdicts << v.dump() << "\n";
        }
      }
      std::cout << Json{{"total", total}, {"accepted", accepted}}.dump() << "\n";
    } else if (*anon) {
      const Mode mode = mode_from_string(mode_name);
      std::shared_ptr<GanSynthesizer> gan;
      if (mode == Mode::Gan) {
        if (ckpt_dir.empty()) throw ConfigError("gan mode needs --ckpt-dir");
        gan = GanSynthesizer::load_directory(ckpt_dir);
      }
      StitchOptions opts;
      opts.edit.psi = psi;
      std::vector<std::pair<fs::path, fs::path>> jobs;
      if (fs::is_directory(in_path)) {
        fs::create_directories(out_path);
        for (const auto& p : list_images(in_path)) jobs.emplace_back(p, fs::path(out_path) / (p.stem().string() + ".png"));
      } else {
        jobs.emplace_back(in_path, out_path);
      }
      for (const auto& [src, dst] : jobs) {
        const ImageTensor image = io::load_image(src.string());
        std::vector<AdapterFailure> failures;
        auto dets = detect_image(image, sidecar_for(src), thresholds, &failures);
        const AnonymizeOutput out = anonymize_detections(image, std::move(dets), mode, seed, gan.get(), opts);
        io::save_image(dst.string(), out.image);
        Json fj = Json::array();
        for (const auto& f : failures) fj.push_back({{"adapter", f.adapter}, {"message", f.message}});
        Json audit{{"input", src.string()},      {"mode", to_string(mode)},
                   {"seed", seed},               {"detections", detections_json(out.detections)},
                   {"plan", plan_audit(out.plan, out.detections)}, {"failures", fj}};
        write_json(dst.parent_path() / (dst.stem().string() + ".audit.json"), audit);
      }
    } else if (*fid) {
      auto fx = make_extractor(extractor, feat_h, feat_w, seed);
      auto load_all = [](const std::string& dir) {
        std::vector<ImageTensor> images;
        for (const auto& p : list_images(dir)) images.push_back(io::load_image(p.string()));
        return images;
      };
      const auto a = compute_statistics(load_all(real_dir), *fx);
      const auto b = compute_statistics(load_all(fake_dir), *fx);
      write_json(out_path, {{"extractor", fx->name()}, {"dim", fx->dim()}, {"n_real", a.n}, {"n_fake", b.n},
                            {"frechet_distance", frechet_distance(a, b)}});
    } else if (*reid) {
      std::map<std::string, std::pair<int, int>> label;
      std::ifstream in(labels);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::stringstream ss(line);
        std::string file, id, src;
        std::getline(ss, file, ',');
        std::getline(ss, id, ',');
        std::getline(ss, src, ',');
        if (id.empty() || !std::isdigit(static_cast<unsigned char>(id[0]))) continue;  // header
        label[file] = {std::stoi(id), src.empty() ? -1 : std::stoi(src)};
      }
      auto items = [&](const std::string& dir) {
        std::vector<ReidItem> out;
        for (const auto& p : list_images(dir)) {
          auto it = label.find(p.filename().string());
          if (it == label.end()) throw ConfigError("no identity label for " + p.filename().string());
          out.push_back({reid_pixel_feature(io::load_image(p.string()), feat_h, feat_w), it->second.first,
                         it->second.second});
        }
        return out;
      };
      const ReidResult r = evaluate_reid(items(query_dir), items(gallery_dir));
      write_json(out_path, {{"mAP", r.mean_ap}, {"rank1", r.rank1}, {"queries", r.queries}});
    } else if (*serve) {
      if (ckpt_dir.empty())
        if (const char* env = std::getenv("REALANON_CKPT_DIR")) ckpt_dir = env;
      if (service_config.token.empty())
        if (const char* env = std::getenv("REALANON_TOKEN")) service_config.token = env;
      service_config.thresholds = thresholds;
      std::shared_ptr<Synthesizer> synthesizer;
      if (!ckpt_dir.empty()) synthesizer = GanSynthesizer::load_directory(ckpt_dir);
      ServiceCore core(service_config, synthesizer);
      std::cerr << "serving on " << host << ":" << port << std::endl;
      run_server(core, host, port);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
