// Trains OPARL on the point-mass task for a few thousand steps and prints the
// evaluation curve.

#include <iostream>

#include "oparl/train.hpp"

int main() {
    oparl::OparlConfig cfg;
    cfg.hidden_sizes = {64, 64};
    cfg.batch_size = 128;
    cfg.learning_starts = 1000;

    oparl::TrainOptions opts;
    opts.total_steps = 6000;
    opts.eval_interval = 1000;
    opts.eval_episodes = 5;

    oparl::PointMass2D env;
    auto result = oparl::train(env, cfg, /*seed=*/7, opts, [](const oparl::RunMetrics& m) {
        if (m.kind == oparl::RecordKind::Eval)
            std::cout << "step " << m.step << "  eval return " << *m.eval_return_mean << "\n";
    });
    std::cout << "episodes " << result.episodes << ", gradient steps " << result.grad_steps << "\n";
}
