// A very small end-to-end run: warm the LM briefly, train a few steps, then
// caption one object of a held-out image. Quality at this budget is poor;
// the point is the call sequence.
#include <iostream>

#include "regionvlm/downstream.hpp"
#include "regionvlm/trainer.hpp"

int main() {
  using namespace regionvlm;
  TrainConfig cfg;
  cfg.num_images = 60;
  cfg.eval_images = 8;
  cfg.max_steps = 30;
  cfg.batch_size = 8;
  cfg.warmup.steps = 150;

  TrainingSetup setup = prepare_training(cfg);
  const TrainReport report = train(setup, cfg);
  std::cout << "loss " << report.steps.front().loss << " -> " << report.steps.back().loss << "\n";

  const SyntheticImage& img = setup.held_out.images.front();
  Rng rng(kDefaultSeed);
  const Scribble s = scribble_in_object(img.objects.front(), img.grid, 16, rng);
  std::cout << "object:  " << img.objects.front().caption() << "\n";
  std::cout << "caption: " << caption_region(setup.model, img, s, rng) << "\n";
  std::cout << "global:  " << caption_region(setup.model, img, Scribble{}, rng) << "\n";
}
