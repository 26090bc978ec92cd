#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "sbdlas/surrogate.hpp"

using namespace sbdlas;

namespace {

GaussianState design_around(const Eigen::Vector2d& center, double var) {
    return isotropic_gaussian(center, var);
}

NetConfig small_net() {
    NetConfig cfg;
    cfg.hidden = {40, 40};
    cfg.activation = Activation::Sigmoid;
    cfg.learning_rate = 1e-3;
    cfg.epochs = 1500;
    cfg.batch = 32;
    cfg.seed = 2;
    return cfg;
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

} // namespace

TEST_CASE("fresh surrogate reproduces the cheap model exactly", "[surrogate]") {
    SurrogateNet surrogate(algebraic_toy_model(), small_net());
    for (double t1 : {0.5, 2.5, -1.0})
        for (double t2 : {1.0, 3.0}) {
            Eigen::Vector2d theta(t1, t2);
            Eigen::VectorXd coarse = algebraic_toy_model()(theta);
            CHECK(surrogate(theta).isApprox(coarse, 0.0));
            CHECK(surrogate.correction(theta).isZero(0.0));
        }
}

TEST_CASE("network overfits the toy residuals", "[surrogate][train]") {
    ForwardModel fine = algebraic_toy_model();
    ForwardModel coarse = zero_model(2, 2);
    SurrogateNet surrogate(coarse, small_net());

    Rng rng = make_rng(1);
    TrainingSet data =
        make_training_set(design_around(Eigen::Vector2d(2.5, 2.5), 0.09), fine, coarse, 200, rng);
    TrainReport report = train(surrogate, data, small_net(), /*warm_start=*/false);

    CHECK(report.final_mse < 5e-3);
    REQUIRE(report.epoch_mse.size() == 1500);

    // the optimization actually descended
    const double head = std::accumulate(report.epoch_mse.begin(), report.epoch_mse.begin() + 5, 0.0);
    const double tail = std::accumulate(report.epoch_mse.end() - 5, report.epoch_mse.end(), 0.0);
    CHECK(tail < head);

    Eigen::Vector2d theta_star(2.5, 2.5);
    CHECK((surrogate(theta_star) - fine(theta_star)).cwiseAbs().maxCoeff() < 0.5);
}

TEST_CASE("warm start keeps weights, cold start redraws them", "[surrogate][train]") {
    ForwardModel fine = algebraic_toy_model();
    ForwardModel coarse = zero_model(2, 2);
    NetConfig cfg = small_net();
    cfg.epochs = 200;
    SurrogateNet surrogate(coarse, cfg);

    Rng rng = make_rng(4);
    TrainingSet data =
        make_training_set(design_around(Eigen::Vector2d(2.5, 2.5), 0.09), fine, coarse, 120, rng);
    TrainReport first = train(surrogate, data, cfg, /*warm_start=*/false);
    const Eigen::MatrixXd w_after = surrogate.net().W[0];

    // zero epochs: a warm call only refits standardizers
    NetConfig frozen = cfg;
    frozen.epochs = 0;
    train(surrogate, data, frozen, /*warm_start=*/true);
    CHECK(surrogate.net().W[0].isApprox(w_after, 0.0));

    // and a cold call with the same seed redraws the fresh initialization
    train(surrogate, data, frozen, /*warm_start=*/false);
    CHECK_FALSE(surrogate.net().W[0].isApprox(w_after, 0.0));

    // warm continuation from the trained state keeps improving
    train(surrogate, data, cfg, /*warm_start=*/false);
    TrainReport resumed = train(surrogate, data, cfg, /*warm_start=*/true);
    CHECK(resumed.final_mse < first.final_mse);
}

TEST_CASE("training rejects bad inputs", "[surrogate][train]") {
    SurrogateNet surrogate(zero_model(2, 2), small_net());
    CHECK_THROWS_AS(train(surrogate, TrainingSet{}, small_net(), false), insufficient_data_error);

    TrainingSet wrong;
    wrong.inputs = Eigen::MatrixXd::Zero(3, 10);
    wrong.fine_values = Eigen::MatrixXd::Zero(2, 10);
    wrong.residuals = Eigen::MatrixXd::Zero(2, 10);
    CHECK_THROWS_AS(train(surrogate, wrong, small_net(), false), std::invalid_argument);
}

TEST_CASE("diverging optimization reports the epoch", "[surrogate][train]") {
    NetConfig cfg;
    cfg.hidden = {8};
    cfg.activation = Activation::Linear;
    cfg.learning_rate = 1e160; // one step overflows the linear net's outputs
    cfg.epochs = 8;
    cfg.batch = 16;
    cfg.seed = 3;
    SurrogateNet surrogate(zero_model(2, 2), cfg);

    Rng rng = make_rng(6);
    TrainingSet data = make_training_set(design_around(Eigen::Vector2d(0, 0), 1.0),
                                         algebraic_toy_model(), zero_model(2, 2), 64, rng);
    try {
        train(surrogate, data, cfg, false);
        FAIL("expected divergence_error");
    } catch (const divergence_error& e) {
        CHECK(e.epoch() >= 0);
        CHECK(e.epoch() < 8);
        CHECK(std::string(e.what()).find("epoch") != std::string::npos);
    }
}

TEST_CASE("single-sample training set is accepted", "[surrogate][train]") {
    NetConfig cfg = small_net();
    cfg.epochs = 5;
    SurrogateNet surrogate(zero_model(2, 2), cfg);
    Rng rng = make_rng(8);
    TrainingSet data = make_training_set(design_around(Eigen::Vector2d(1, 1), 1.0),
                                         algebraic_toy_model(), zero_model(2, 2), 1, rng);
    TrainReport report = train(surrogate, data, cfg, false);
    CHECK(std::isfinite(report.final_mse));
}

TEST_CASE("analytic gradients match finite differences", "[surrogate][gradcheck]") {
    Rng rng = make_rng(12);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd X(2, 5), T(3, 5);
    for (Eigen::Index j = 0; j < 5; ++j) {
        for (Eigen::Index i = 0; i < 2; ++i) X(i, j) = normal(rng);
        for (Eigen::Index i = 0; i < 3; ++i) T(i, j) = normal(rng);
    }

    Mlp sigmoid_net(2, 3, {6, 5}, Activation::Sigmoid);
    sigmoid_net.init_weights(3);
    CHECK(gradient_check(sigmoid_net, X, T) < 1e-5);

    Mlp prelu_net(2, 3, {7}, Activation::PReLU);
    prelu_net.init_weights(5);
    CHECK(gradient_check(prelu_net, X, T) < 1e-5);

    Mlp linear_net(2, 3, {4}, Activation::Linear);
    linear_net.init_weights(7);
    CHECK(gradient_check(linear_net, X, T) < 1e-7);
}

TEST_CASE("gradient check runs on the trained surrogate", "[surrogate][gradcheck]") {
    NetConfig cfg;
    cfg.hidden = {10};
    cfg.activation = Activation::PReLU;
    cfg.epochs = 50;
    cfg.seed = 9;
    SurrogateNet surrogate(zero_model(2, 2), cfg);
    Rng rng = make_rng(10);
    TrainingSet data = make_training_set(design_around(Eigen::Vector2d(2.5, 2.5), 0.25),
                                         algebraic_toy_model(), zero_model(2, 2), 40, rng);
    train(surrogate, data, cfg, false);
    CHECK(gradient_check(surrogate, data) < 1e-5);
}

TEST_CASE("standardizer normalizes and round-trips", "[surrogate][standardizer]") {
    Rng rng = make_rng(20);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd data(3, 50);
    for (Eigen::Index j = 0; j < 50; ++j) {
        data(0, j) = 10.0 + 2.0 * normal(rng);
        data(1, j) = -5.0 + 0.1 * normal(rng);
        data(2, j) = 7.0; // degenerate dimension
    }

    Standardizer st;
    st.fit(data);
    Eigen::MatrixXd z = st.apply(data);
    CHECK(z.rowwise().mean().cwiseAbs().maxCoeff() < 1e-12);
    CHECK(std::abs(z.row(0).squaredNorm() / 50.0 - 1.0) < 1e-12);
    CHECK(std::abs(z.row(1).squaredNorm() / 50.0 - 1.0) < 1e-12);
    CHECK(z.row(2).cwiseAbs().maxCoeff() == 0.0); // constant row maps to zero
    CHECK(st.scale()[2] == 1.0);
    CHECK(st.invert(z).isApprox(data, 1e-12));

    Eigen::VectorXd x = data.col(7);
    CHECK(st.invert(st.apply(x)).isApprox(x, 1e-12));

    Standardizer identity(3);
    CHECK(identity.apply(x).isApprox(x, 0.0));

    Standardizer unfit;
    CHECK_THROWS_AS(unfit.fit(Eigen::MatrixXd(3, 0)), insufficient_data_error);
}

TEST_CASE("training set carries residuals and call counts", "[surrogate]") {
    ForwardModel fine = algebraic_toy_model();
    ForwardModel coarse("identity", 2, 2, [](const Eigen::VectorXd& t) { return t; });
    fine.reset_calls();
    Rng rng = make_rng(14);
    TrainingSet data = make_training_set(design_around(Eigen::Vector2d(1, 1), 0.25), fine, coarse,
                                         30, rng);
    CHECK(data.size() == 30);
    CHECK(fine.calls() == 30);
    CHECK(coarse.calls() == 30);
    for (int i = 0; i < data.size(); ++i) {
        Eigen::VectorXd expected = data.fine_values.col(i) - coarse(data.inputs.col(i));
        CHECK(data.residuals.col(i).isApprox(expected, 0.0));
    }

    Rng rng2 = make_rng(14);
    TrainingSet again = make_training_set(design_around(Eigen::Vector2d(1, 1), 0.25), fine, coarse,
                                          30, rng2);
    CHECK(again.inputs.isApprox(data.inputs, 0.0));

    CHECK_THROWS_AS(make_training_set(design_around(Eigen::Vector2d(1, 1), 1.0), fine,
                                      zero_model(3, 2), 5, rng),
                    std::invalid_argument);
    CHECK_THROWS_AS(make_training_set(design_around(Eigen::Vector2d(1, 1), 1.0), fine, coarse, 0,
                                      rng),
                    std::invalid_argument);
}

TEST_CASE("surrogate model view tracks retraining", "[surrogate]") {
    NetConfig cfg = small_net();
    cfg.epochs = 300;
    auto surrogate = std::make_shared<SurrogateNet>(zero_model(2, 2), cfg);
    ForwardModel view = surrogate_model(surrogate, "surrogate");
    CHECK(view.input_dim() == 2);
    CHECK(view.output_dim() == 2);

    Eigen::Vector2d theta(2.5, 2.5);
    CHECK(view(theta).isZero(0.0)); // fresh: zero coarse + zero correction

    Rng rng = make_rng(15);
    TrainingSet data = make_training_set(design_around(Eigen::Vector2d(2.5, 2.5), 0.09),
                                         algebraic_toy_model(), zero_model(2, 2), 80, rng);
    train(*surrogate, data, cfg, false);
    CHECK_FALSE(view(theta).isZero(0.0));
    CHECK(view(theta).isApprox((*surrogate)(theta), 0.0));

    CHECK_THROWS_AS(surrogate_model(nullptr, "null"), std::invalid_argument);
}

TEST_CASE("surrogate checkpoints round-trip through disk", "[surrogate][io]") {
    NetConfig cfg;
    cfg.hidden = {12, 9};
    cfg.activation = Activation::PReLU;
    cfg.epochs = 120;
    cfg.seed = 21;
    SurrogateNet surrogate(algebraic_toy_model(), cfg);
    Rng rng = make_rng(22);
    TrainingSet data = make_training_set(design_around(Eigen::Vector2d(2.0, 2.0), 0.25),
                                         algebraic_toy_model(), algebraic_toy_model(), 60, rng);
    train(surrogate, data, cfg, false);

    const auto path = temp_file("sbdlas_net_roundtrip.bin");
    save_surrogate(path.string(), surrogate);
    SurrogateNet loaded = load_surrogate(path.string(), algebraic_toy_model());

    CHECK(loaded.net().activation() == Activation::PReLU);
    CHECK(loaded.net().slope == surrogate.net().slope);
    for (double t1 : {1.5, 2.0, 2.7}) {
        Eigen::Vector2d theta(t1, 2.0);
        CHECK(loaded(theta).isApprox(surrogate(theta), 0.0));
    }
    CHECK(loaded.input_standardizer().shift().isApprox(surrogate.input_standardizer().shift(), 0.0));
    CHECK(loaded.output_standardizer().scale().isApprox(surrogate.output_standardizer().scale(), 0.0));

    // wrong cheap-model dimensions are rejected before weights are read
    CHECK_THROWS_AS(load_surrogate(path.string(), zero_model(3, 2)), std::runtime_error);

    const auto junk = temp_file("sbdlas_net_junk.bin");
    {
        std::ofstream os(junk, std::ios::binary | std::ios::trunc);
        os << "not a checkpoint at all";
    }
    CHECK_THROWS_AS(load_surrogate(junk.string(), algebraic_toy_model()), std::runtime_error);
    CHECK_THROWS_AS(load_surrogate("/nonexistent/dir/x.bin", algebraic_toy_model()),
                    std::runtime_error);
    std::filesystem::remove(path);
    std::filesystem::remove(junk);
}
