#ifndef PBGMM_HPP
#define PBGMM_HPP

#include "pbgmm/errors.hpp"
#include "pbgmm/spline_kernel.hpp"
#include "pbgmm/mixture_model.hpp"
#include "pbgmm/parameter_vector.hpp"
#include "pbgmm/optimizer.hpp"
#include "pbgmm/random.hpp"
#include "pbgmm/estimation.hpp"
#include "pbgmm/model_selection.hpp"
#include "pbgmm/simulation.hpp"
#include "pbgmm/io.hpp"
#include "pbgmm/run.hpp"

#endif // PBGMM_HPP
