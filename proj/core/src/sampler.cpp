#include "vclab/sampler.hpp"

namespace vclab {

template Tensor<float> ddim_sample<float>(const Denoiser<float>&,
                                          const NoiseSchedule&,
                                          const std::vector<ConceptSet<float>>&,
                                          const DdimConfig&, Rng&,
                                          DdimCache<float>&);
template Tensor<double> ddim_sample<double>(
    const Denoiser<double>&, const NoiseSchedule&,
    const std::vector<ConceptSet<double>>&, const DdimConfig&, Rng&,
    DdimCache<double>&);
template DdimGrads<float> ddim_backward<float>(Denoiser<float>&,
                                               const Tensor<float>&,
                                               const DdimCache<float>&);
template DdimGrads<double> ddim_backward<double>(Denoiser<double>&,
                                                 const Tensor<double>&,
                                                 const DdimCache<double>&);

}  // namespace vclab
