"""Patient trajectory modelling on EHR admissions.

Admission encoders, sliding-window recurrent models over admission
sequences, patient-level fold construction and evaluation metrics, all in
plain numpy.
"""

__version__ = "0.1.0"
