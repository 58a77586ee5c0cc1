from sigg.nnet.params import tune_allocator

tune_allocator()
