#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "neuralmat/brdf.hpp"
#include "neuralmat/checkpoint.hpp"
#include "neuralmat/config.hpp"
#include "neuralmat/evalharness.hpp"
#include "neuralmat/fixtures.hpp"
#include "neuralmat/material_space.hpp"
#include "neuralmat/noise_field.hpp"
#include "neuralmat/training.hpp"

namespace py = pybind11;
using namespace neuralmat;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::array_t<double> to_numpy(const std::vector<double>& v, std::vector<py::ssize_t> shape) {
  py::array_t<double> out(shape);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

std::vector<double> plane_vector(const DoubleArray& a, py::ssize_t channels, int h, int w, const char* name) {
  const py::ssize_t expect = channels * h * w;
  if (a.size() != expect)
    throw std::invalid_argument(std::string(name) + " must have " + std::to_string(channels) + "x" +
                                std::to_string(h) + "x" + std::to_string(w) + " values");
  return {a.data(), a.data() + a.size()};
}

py::dict maps_to_dict(const MaterialMaps& m) {
  py::dict d;
  d["diffuse"] = to_numpy(m.diffuse, {3, m.height, m.width});
  d["specular"] = to_numpy(m.specular, {m.height, m.width});
  d["roughness"] = to_numpy(m.roughness, {m.height, m.width});
  d["height"] = to_numpy(m.height_map, {m.height, m.width});
  return d;
}

MaterialMaps maps_from_dict(const py::dict& d) {
  const auto diffuse = d["diffuse"].cast<DoubleArray>();
  if (diffuse.ndim() != 3 || diffuse.shape(0) != 3) throw std::invalid_argument("diffuse must be [3, H, W]");
  const int h = static_cast<int>(diffuse.shape(1)), w = static_cast<int>(diffuse.shape(2));
  MaterialMaps m;
  m.width = w;
  m.height = h;
  m.diffuse = plane_vector(diffuse, 3, h, w, "diffuse");
  m.specular = plane_vector(d["specular"].cast<DoubleArray>(), 1, h, w, "specular");
  m.roughness = plane_vector(d["roughness"].cast<DoubleArray>(), 1, h, w, "roughness");
  m.height_map = plane_vector(d["height"].cast<DoubleArray>(), 1, h, w, "height");
  m.validate();
  return m;
}

Image image_from_numpy(const FloatArray& a) {
  if (a.ndim() != 3 || (a.shape(0) != 3 && a.shape(0) != 1))
    throw std::invalid_argument("image must be [3, H, W] or [1, H, W] floats in [0, 1]");
  Image img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), img.data.begin());
  return img;
}

py::array_t<float> image_to_numpy(const Image& img) {
  py::array_t<float> out({img.channels, img.height, img.width});
  std::copy(img.data.begin(), img.data.end(), out.mutable_data());
  return out;
}

CaptureGeometry geometry(double fov, double distance, std::pair<double, double> rotation,
                         std::optional<std::array<double, 3>> light, std::optional<double> intensity) {
  CaptureGeometry g;
  g.fov_deg = fov;
  g.plane_distance = distance;
  g.rotation_h = rotation.first;
  g.rotation_v = rotation.second;
  if (light) g.light_position = Vec3{(*light)[0], (*light)[1], (*light)[2]};
  if (intensity) g.light_intensity = *intensity;
  return g;
}

Config config_from(const std::map<std::string, std::string>& overrides) {
  Config c;
  for (const auto& [k, v] : overrides) c.set(k, v);
  return c;
}

FinetuneConfig finetune_config(int steps, std::uint64_t seed, double lr) {
  FinetuneConfig f;
  f.steps = steps;
  f.seed = seed;
  f.learning_rate = lr;
  return f;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Flash-image material capture and synthesis";

  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_OSError);

  m.def(
      "noise_crop",
      [](std::uint64_t seed, std::pair<int, int> origin, std::pair<int, int> size, int channels) {
        NoiseField f(seed, channels);
        const auto crop = f.sample_crop({origin.first, origin.second}, {size.first, size.second});
        py::array_t<float> out({crop.channels, crop.height, crop.width});
        std::copy(crop.data.begin(), crop.data.end(), out.mutable_data());
        return out;
      },
      py::arg("seed"), py::arg("origin"), py::arg("size"), py::arg("channels") = NoiseField::kDefaultChannels,
      "Noise crop [C, H, W]; origin (x, y), size (width, height).");

  m.def("fresnel_schlick", &fresnel_schlick, py::arg("cos_theta"), py::arg("f0"));
  m.def("ggx_ndf", &ggx_ndf, py::arg("n_dot_h"), py::arg("alpha"));
  m.def("smith_g", &smith_g, py::arg("n_dot_l"), py::arg("n_dot_v"), py::arg("alpha"));
  m.def(
      "height_to_normals",
      [](const DoubleArray& h, double pixel_scale) {
        if (h.ndim() != 2) throw std::invalid_argument("height must be [H, W]");
        const int rows = static_cast<int>(h.shape(0)), cols = static_cast<int>(h.shape(1));
        const auto n = height_to_normals({h.data(), static_cast<std::size_t>(h.size())}, cols, rows, pixel_scale);
        return to_numpy(n, {3, rows, cols});
      },
      py::arg("height"), py::arg("pixel_scale") = 1.0);

  m.def(
      "shade",
      [](const py::dict& maps, double fov, double distance, std::pair<double, double> rotation,
         std::optional<std::array<double, 3>> light, std::optional<double> intensity, const std::string& alpha_mode) {
        const auto mm = maps_from_dict(maps);
        const auto r =
            shade(mm, geometry(fov, distance, rotation, light, intensity), {alpha_mode_from_string(alpha_mode), 1.0});
        return to_numpy(r.radiance, {3, r.height, r.width});
      },
      py::arg("maps"), py::arg("fov_deg") = 45.0, py::arg("plane_distance") = 1.0,
      py::arg("rotation") = std::pair<double, double>{0, 0}, py::arg("light") = py::none(),
      py::arg("intensity") = py::none(), py::arg("alpha_mode") = "squared",
      "Linear radiance [3, H, W] of a maps dict (diffuse, specular, roughness, height).");

  m.def(
      "srgb_encode",
      [](const FloatArray& a) {
        py::array_t<float> out(std::vector<py::ssize_t>(a.shape(), a.shape() + a.ndim()));
        for (py::ssize_t k = 0; k < a.size(); ++k) out.mutable_data()[k] = srgb_encode(a.data()[k]);
        return out;
      },
      py::arg("linear"));

  m.def(
      "kl_divergence",
      [](const DoubleArray& mean, const DoubleArray& log_variance) {
        if (mean.size() != log_variance.size()) throw std::invalid_argument("mean and log_variance differ in size");
        auto mu = torch::from_blob(const_cast<double*>(mean.data()), {mean.size()}, torch::kDouble);
        auto lv = torch::from_blob(const_cast<double*>(log_variance.data()), {log_variance.size()}, torch::kDouble);
        return kl_divergence(mu, lv).item<double>();
      },
      py::arg("mean"), py::arg("log_variance"));

  m.def("fixture_names", &procedural_fixture_names);
  m.def(
      "procedural_material",
      [](const std::string& name, int width, int height, std::uint64_t seed) {
        return maps_to_dict(procedural_material(name, width, height, seed));
      },
      py::arg("name"), py::arg("width"), py::arg("height"), py::arg("seed") = 0);

  m.def(
      "xyz_histogram_l1",
      [](const FloatArray& a, const FloatArray& b, int bins) {
        return xyz_histogram_l1(image_from_numpy(a), image_from_numpy(b), bins);
      },
      py::arg("a"), py::arg("b"), py::arg("bins") = 64);

  m.def(
      "export_maps",
      [](const py::dict& maps, const std::filesystem::path& dir, const std::string& format, const std::string& id,
         std::uint64_t seed, double height_max) {
        ExportInfo info;
        info.id = id;
        info.seed = seed;
        const auto mm = maps_from_dict(maps);
        info.size = {mm.width, mm.height};
        info.height_max = height_max;
        return export_maps(mm, dir, map_format_from_string(format), info);
      },
      py::arg("maps"), py::arg("directory"), py::arg("format") = "png16", py::arg("id") = "", py::arg("seed") = 0,
      py::arg("height_max") = 2.0);
  m.def(
      "import_maps", [](const std::filesystem::path& dir) { return maps_to_dict(import_maps(dir)); },
      py::arg("directory"));

  py::class_<Material>(m, "Material")
      .def_readonly("id", &Material::id)
      .def_readonly("parents", &Material::parents)
      .def_readonly("base_id", &Material::base_id)
      .def_readonly("tuned", &Material::tuned)
      .def_property_readonly("z",
                             [](const Material& mat) {
                               auto z = mat.z.detach().to(torch::kDouble).contiguous();
                               std::vector<double> v(z.data_ptr<double>(), z.data_ptr<double>() + z.numel());
                               return to_numpy(v, {static_cast<py::ssize_t>(v.size())});
                             })
      .def_property_readonly("provenance", [](const Material& mat) { return std::string(to_string(mat.provenance)); })
      .def(
          "synthesize",
          [](const Material& mat, std::pair<int, int> origin, std::pair<int, int> size, std::uint64_t seed,
             const std::string& mode, int margin) {
            SynthesisRequest req;
            req.origin = {origin.first, origin.second};
            req.size = {size.first, size.second};
            req.seed = seed;
            if (mode == "reference")
              req.mode = StatsMode::Reference;
            else if (mode == "per-crop")
              req.mode = StatsMode::PerCrop;
            else
              throw std::invalid_argument("mode must be 'reference' or 'per-crop'");
            SynthesisOptions opt;
            if (margin >= 0) opt.margin = margin;
            py::gil_scoped_release release;
            auto maps = synthesize(mat, req, opt);
            py::gil_scoped_acquire acquire;
            return maps_to_dict(maps);
          },
          py::arg("origin") = std::pair<int, int>{0, 0}, py::arg("size") = std::pair<int, int>{256, 256},
          py::arg("seed") = 0, py::arg("mode") = "reference", py::arg("margin") = -1)
      .def("save", [](const Material& mat, const std::filesystem::path& dir) { save_material(mat, dir); });

  m.def("load_material", &load_material, py::arg("directory"));
  m.def("interpolate", &interpolate, py::arg("a"), py::arg("b"), py::arg("t"));

  py::class_<Model>(m, "Model")
      .def_readonly("id", &Model::id)
      .def_property_readonly("latent_dim", [](const Model& mdl) { return mdl.config.latent_dim(); })
      .def_property_readonly("input_size",
                             [](const Model& mdl) {
                               return std::pair<int, int>{mdl.config.encoder.input_width,
                                                          mdl.config.encoder.input_height};
                             })
      .def(
          "capture",
          [](Model& mdl, const FloatArray& image, bool finetune, int steps, std::uint64_t seed, double lr) {
            const Image img = image_from_numpy(image);
            py::gil_scoped_release release;
            return capture(mdl, img, finetune, finetune_config(steps, seed, lr));
          },
          py::arg("image"), py::arg("finetune") = false, py::arg("steps") = 1000, py::arg("seed") = 0,
          py::arg("learning_rate") = 1e-3)
      .def("sample_prior", [](Model& mdl, std::uint64_t seed) { return sample_prior(mdl, seed); }, py::arg("seed"))
      .def(
          "encode",
          [](Model& mdl, const FloatArray& image) {
            const auto out = encode_image(mdl, image_from_numpy(image));
            auto cvt = [](const torch::Tensor& t) {
              auto c = t.detach().to(torch::kDouble).contiguous().view(-1);
              return to_numpy({c.data_ptr<double>(), c.data_ptr<double>() + c.numel()}, {c.numel()});
            };
            return py::make_tuple(cvt(out.mean), cvt(out.log_variance), cvt(out.angles));
          },
          py::arg("image"))
      .def(
          "texture_distance",
          [](Model& mdl, const FloatArray& a, const FloatArray& b, int n_crops, std::uint64_t seed) {
            TextureLossConfig cfg;
            cfg.n_crops = n_crops;
            return texture_distance(mdl.extractor, image_from_numpy(a), image_from_numpy(b), cfg, seed);
          },
          py::arg("a"), py::arg("b"), py::arg("n_crops") = 4, py::arg("seed") = 0)
      .def(
          "style_error",
          [](Model& mdl, const FloatArray& a, const FloatArray& b) {
            return style_error(mdl.extractor, image_from_numpy(a), image_from_numpy(b));
          },
          py::arg("a"), py::arg("b"))
      .def("save", [](Model& mdl, const std::filesystem::path& dir) { save_model(mdl, dir); });

  m.def(
      "create_model",
      [](const std::map<std::string, std::string>& overrides) {
        return Model::create(config_from(overrides).model_config());
      },
      py::arg("overrides") = std::map<std::string, std::string>{},
      "Fresh model; overrides use configuration keys such as 'model.latent_dim'.");
  m.def("load_model", [](const std::filesystem::path& dir) { return load_model(dir); }, py::arg("directory"));

  m.def(
      "train",
      [](Model& mdl, const std::vector<FloatArray>& images, const std::map<std::string, std::string>& overrides,
         const std::filesystem::path& run_dir) {
        std::vector<Image> data;
        for (const auto& a : images) data.push_back(image_from_numpy(a));
        Trainer trainer(mdl, config_from(overrides).train_config());
        std::vector<std::tuple<int, double, double, double>> out;
        {
          py::gil_scoped_release release;
          for (const auto& lb : trainer.train(data, run_dir)) out.emplace_back(lb.step, lb.texture, lb.kl, lb.total);
        }
        mdl = trainer.model();
        return out;
      },
      py::arg("model"), py::arg("images"), py::arg("overrides") = std::map<std::string, std::string>{},
      py::arg("run_dir") = std::filesystem::path{},
      "Trains in place; returns (step, texture, kl, total) per step.");
}
