#pragma once

#include "tclab/core.hpp"
#include "tclab/mdp.hpp"
#include "tclab/option_model.hpp"
#include "tclab/termination_gradient.hpp"
#include "tclab/predictability.hpp"
#include "tclab/environments.hpp"
#include "tclab/trainer.hpp"
#include "tclab/io.hpp"
#include "tclab/parallel.hpp"
#include "tclab/planning.hpp"
#include "tclab/verification.hpp"
#include "tclab/experiments.hpp"
