#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "d2a/selftest.hpp"
#include "d2a/trainer.hpp"

#include <sstream>

namespace py = pybind11;
using d2a::Shape;
using d2a::Tensor;

namespace {

using FArr = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor<float> to_tensor(const FArr& a) {
    Shape shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[i] = a.shape(i);
    std::vector<float> data(a.data(), a.data() + a.size());
    return Tensor<float>(std::move(shape), std::move(data));
}

py::array_t<float> from_tensor(const Tensor<float>& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<float> out(shape);
    std::copy(t.values().begin(), t.values().end(), out.mutable_data());
    return out;
}

py::dict record_dict(const d2a::MetricsRecord& m) {
    py::dict d;
    d["tp"] = m.tp;
    d["fp"] = m.fp;
    d["tn"] = m.tn;
    d["fn"] = m.fn;
    d["dice"] = m.dice();
    d["pixel_error"] = m.pixel_error();
    d["recall"] = m.recall();
    return d;
}

d2a::ModelConfig config_from_kwargs(const std::string& encoder,
                                    const std::vector<int64_t>& encoder_channels,
                                    int64_t reduce_ratio, int64_t input_extent) {
    d2a::ModelConfig c;
    c.encoder = encoder;
    c.encoder_channels = encoder_channels;
    c.reduce_ratio = reduce_ratio;
    c.input_extent = input_extent;
    c.validate();
    return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "dilated dual-attention U-Net core operations";

    m.def(
        "conv2d",
        [](const FArr& input, const FArr& weight, py::object bias, int64_t stride,
           int64_t padding, int64_t dilation, int64_t groups) {
            d2a::NoGradGuard ng;
            Tensor<float> x = to_tensor(input), w = to_tensor(weight);
            if (bias.is_none()) return from_tensor(d2a::conv2d(x, w, (Tensor<float>*)nullptr,
                                                               stride, padding, dilation, groups));
            Tensor<float> b = to_tensor(bias.cast<FArr>());
            return from_tensor(d2a::conv2d(x, w, &b, stride, padding, dilation, groups));
        },
        py::arg("input"), py::arg("weight"), py::arg("bias") = py::none(), py::arg("stride") = 1,
        py::arg("padding") = 0, py::arg("dilation") = 1, py::arg("groups") = 1,
        "Direct dilated 2-D convolution over [B,C,H,W].");

    m.def(
        "bilinear_upsample",
        [](const FArr& input, int64_t scale) {
            d2a::NoGradGuard ng;
            return from_tensor(d2a::bilinear_upsample(to_tensor(input), scale));
        },
        py::arg("input"), py::arg("scale") = 2);

    m.def(
        "max_pool2d",
        [](const FArr& input) {
            d2a::NoGradGuard ng;
            return from_tensor(d2a::max_pool2d(to_tensor(input)));
        },
        py::arg("input"), "2x2 stride-2 max pooling.");

    m.def(
        "global_avg_pool",
        [](const FArr& input) {
            d2a::NoGradGuard ng;
            return from_tensor(d2a::global_avg_pool(to_tensor(input)));
        },
        py::arg("input"));

    m.def(
        "sigmoid",
        [](const FArr& input) {
            d2a::NoGradGuard ng;
            return from_tensor(d2a::sigmoid(to_tensor(input)));
        },
        py::arg("input"));

    m.def("equivalent_kernel_size", &d2a::equivalent_kernel_size, py::arg("kernel"),
          py::arg("dilation"), "K = k + (k-1)(n-1)");
    m.def("theoretical_receptive_field", &d2a::theoretical_receptive_field, py::arg("stack"),
          "Receptive field of a stride-1 stack of (kernel, dilation) pairs.");

    m.def(
        "dice_loss",
        [](const FArr& logits, const FArr& target, double eps) {
            d2a::NoGradGuard ng;
            d2a::LossConfig cfg;
            cfg.dice_epsilon = eps;
            return (double)d2a::dice_loss(to_tensor(logits), to_tensor(target), cfg).item();
        },
        py::arg("logits"), py::arg("target"), py::arg("eps") = 1e-5);

    m.def(
        "bce_loss",
        [](const FArr& logits, const FArr& target) {
            d2a::NoGradGuard ng;
            return (double)d2a::bce_loss(to_tensor(logits), to_tensor(target)).item();
        },
        py::arg("logits"), py::arg("target"));

    m.def(
        "seg_loss",
        [](const FArr& logits, const FArr& target, double alpha, double eps) {
            d2a::NoGradGuard ng;
            d2a::LossConfig cfg;
            cfg.alpha = alpha;
            cfg.dice_epsilon = eps;
            return (double)d2a::seg_loss(to_tensor(logits), to_tensor(target), cfg).item();
        },
        py::arg("logits"), py::arg("target"), py::arg("alpha") = 1.0, py::arg("eps") = 1e-5,
        "dice + alpha * bce on logits.");

    m.def(
        "compute_metrics",
        [](const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& pred,
           const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& truth) {
            std::vector<uint8_t> p(pred.data(), pred.data() + pred.size());
            std::vector<uint8_t> t(truth.data(), truth.data() + truth.size());
            return record_dict(d2a::compute_metrics(p, t));
        },
        py::arg("pred"), py::arg("truth"), "Confusion counts plus dice/pixel_error/recall.");

    m.def(
        "count_params_flops",
        [](const std::string& encoder, const std::vector<int64_t>& encoder_channels,
           int64_t reduce_ratio, int64_t input_extent) {
            auto r = d2a::count_params_flops(
                config_from_kwargs(encoder, encoder_channels, reduce_ratio, input_extent));
            return py::make_tuple(r.params, r.macs);
        },
        py::arg("encoder") = "vgg",
        py::arg("encoder_channels") = std::vector<int64_t>{8, 16, 32, 64, 128},
        py::arg("reduce_ratio") = 16, py::arg("input_extent") = 64,
        "(parameter count, forward MACs) for a configuration.");

    m.def(
        "selftest",
        [](bool inject_fault) {
            std::ostringstream os;
            int failures = d2a::run_selftest(os, inject_fault);
            return py::make_tuple(failures, os.str());
        },
        py::arg("inject_fault") = false,
        "Run the numeric sanity suite; returns (failures, report text).");

    py::class_<d2a::D2AUNet<float>>(m, "Model")
        .def(py::init([](const std::string& encoder, const std::vector<int64_t>& encoder_channels,
                         int64_t reduce_ratio, int64_t input_extent, uint64_t seed) {
                 return d2a::D2AUNet<float>(
                     config_from_kwargs(encoder, encoder_channels, reduce_ratio, input_extent),
                     seed);
             }),
             py::arg("encoder") = "vgg",
             py::arg("encoder_channels") = std::vector<int64_t>{8, 16, 32, 64, 128},
             py::arg("reduce_ratio") = 16, py::arg("input_extent") = 64, py::arg("seed") = 0)
        .def(
            "forward",
            [](d2a::D2AUNet<float>& self, const FArr& x, bool training) {
                d2a::NoGradGuard ng;
                return from_tensor(self.forward(to_tensor(x), training));
            },
            py::arg("x"), py::arg("training") = false, "Logit map for a [B,1,H,W] batch.")
        .def("parameter_count", &d2a::D2AUNet<float>::parameter_count)
        .def_property_readonly("extent_divisor", [](d2a::D2AUNet<float>& self) {
            return self.config().extent_divisor();
        });

    m.def(
        "load_model",
        [](const std::string& path) {
            d2a::TrainerState st;
            return d2a::load_checkpoint(path, nullptr, st);
        },
        py::arg("checkpoint"), "Load a Model from a training checkpoint.");
}
