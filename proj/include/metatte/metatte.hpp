#pragma once

#include "metatte/autodiff.hpp"
#include "metatte/checkpoint.hpp"
#include "metatte/config.hpp"
#include "metatte/container.hpp"
#include "metatte/error.hpp"
#include "metatte/evaluation.hpp"
#include "metatte/model.hpp"
#include "metatte/params.hpp"
#include "metatte/rng.hpp"
#include "metatte/synthetic.hpp"
#include "metatte/task_io.hpp"
#include "metatte/tensor.hpp"
#include "metatte/train_config.hpp"
#include "metatte/trainer.hpp"
#include "metatte/trajectory.hpp"
